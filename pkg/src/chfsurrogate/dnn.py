"""Supervised CHF regression and initialization-seed ensembles."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import N_CONDITIONS, ScalerParams
from .metrics import SampleStats, sample_stats
from .nn import (AdamState, DenseNetwork, NumericalError, Rng, adam_step, backward, forward,
                 forward_trace, init_network, load_checkpoint, lr_schedule, minibatches, mse_loss,
                 save_checkpoint)


@dataclass(frozen=True)
class DnnConfig:
    # depth, epochs and decay are the published protocol; width, lr and
    # batch size were never reported and are repo defaults
    hidden_layer_widths: tuple[int, ...] = (256,) * 8
    epochs: int = 500
    initial_lr: float = 1e-3
    lr_decay: float = 0.96
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layer_widths", tuple(int(w) for w in self.hidden_layer_widths))
        if not self.hidden_layer_widths or any(w < 1 for w in self.hidden_layer_widths):
            raise ValueError("hidden widths must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.batch_size < 1 or not self.initial_lr > 0:
            raise ValueError("batch_size and initial_lr must be positive")

    @property
    def sizes(self) -> list[int]:
        return [N_CONDITIONS, *self.hidden_layer_widths, 1]


@dataclass
class LossHistory:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    initial_train: float = float("nan")
    initial_val: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def _xy(table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2 or t.shape[1] != N_CONDITIONS + 1:
        raise ValueError(f"expected a standardized (n, {N_CONDITIONS + 1}) table, got {t.shape}")
    return t[:, :N_CONDITIONS], t[:, N_CONDITIONS:]


def _full_mse(net: DenseNetwork, x: np.ndarray, y: np.ndarray) -> float:
    return mse_loss(forward(net, x), y)[0] if len(x) else float("nan")


def train_dnn(config: DnnConfig, train: np.ndarray, val: np.ndarray) -> tuple[DenseNetwork, LossHistory]:
    """Fit a 7 -> 1 regressor on standardized tables with Adam and per-epoch lr decay."""
    x, y = _xy(train)
    xv, yv = _xy(val)
    if len(x) == 0:
        raise ValueError("training table is empty")
    rng = Rng(config.seed)
    net = init_network(config.sizes, None, rng.child(1))
    batch_rng = rng.child(2)
    params = net.params()
    state = AdamState.fresh(params, lr=config.initial_lr)
    hist = LossHistory(initial_train=_full_mse(net, x, y), initial_val=_full_mse(net, xv, yv))

    for epoch in range(config.epochs):
        state.lr = lr_schedule(config.initial_lr, config.lr_decay, epoch)
        total = 0.0
        for idx in minibatches(len(x), config.batch_size, batch_rng):
            try:
                out, trace = forward_trace(net, x[idx])
                loss, g = mse_loss(out, y[idx])
                grads, _ = backward(net, None, g, trace)
            except NumericalError as e:
                raise NumericalError(f"epoch {epoch}: {e}") from e
            if not np.isfinite(loss):
                raise NumericalError(f"epoch {epoch}: non-finite training loss")
            params, state = adam_step(params, grads, state)
            net = net.with_params(params)
            total += loss * len(idx)
        hist.train.append(total / len(x))
        hist.val.append(_full_mse(net, xv, yv))
        if len(xv) and not np.isfinite(hist.val[-1]):
            raise NumericalError(f"epoch {epoch}: non-finite validation loss")
    return net, hist


def predict(net: DenseNetwork, conditions: np.ndarray, scaler: ScalerParams) -> np.ndarray | float:
    """CHF in kW/m^2 for one 7-vector (returns a float) or an (n, 7) array."""
    c = np.asarray(conditions, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise ValueError("conditions must be finite")
    out = scaler.inverse_chf(forward(net, scaler.transform_conditions(c))[..., 0])
    return float(out) if out.ndim == 0 else out


@dataclass(eq=False)
class Ensemble:
    members: list[DenseNetwork]
    seeds: list[int]
    histories: list[LossHistory] = field(default_factory=list)

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        if len(self.seeds) != len(self.members):
            raise ValueError("one seed per member required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"duplicate seeds in ensemble: {self.seeds}")
        ref = self.members[0]
        for m in self.members[1:]:
            if m.sizes != ref.sizes or m.activations != ref.activations:
                raise ValueError("ensemble members must share one architecture")


def _train_member(args):
    config, train, val = args
    return train_dnn(config, train, val)


def train_ensemble(config: DnnConfig, n_members: int, base_seed: int, train: np.ndarray,
                   val: np.ndarray, workers: int = 1,
                   seeds: Sequence[int] | None = None) -> Ensemble:
    """Train ``n_members`` copies of ``config`` differing only in seed (base_seed + i)."""
    if n_members < 2:
        raise ValueError("n_members must be >= 2")
    seeds = list(seeds) if seeds is not None else [base_seed + i for i in range(n_members)]
    if len(seeds) != n_members or len(set(seeds)) != n_members:
        raise ValueError(f"need {n_members} distinct seeds, got {seeds}")
    jobs = [(_with_seed(config, s), train, val) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_member, jobs))
    else:
        results = [_train_member(j) for j in jobs]
    return Ensemble([r[0] for r in results], seeds, [r[1] for r in results])


def _with_seed(config: DnnConfig, seed: int) -> DnnConfig:
    return DnnConfig(**{**asdict(config), "seed": int(seed)})


def member_predictions(ens: Ensemble, conditions: np.ndarray, scaler: ScalerParams) -> np.ndarray:
    """(n_members, ...) physical predictions, one row per member."""
    return np.stack([np.asarray(predict(m, conditions, scaler)) for m in ens.members])


def ensemble_predict(ens: Ensemble, conditions: np.ndarray, scaler: ScalerParams) -> SampleStats:
    return sample_stats(member_predictions(ens, conditions, scaler), axis=0)


def save_dnn(path: str | Path, net: DenseNetwork, scaler: ScalerParams, seed: int,
             config: DnnConfig | None = None) -> None:
    meta = {"kind": "dnn", "seed": int(seed), "scaler": scaler.to_dict(),
            "config": asdict(config) if config else None}
    save_checkpoint(path, {"net": net}, meta)


def load_dnn(path: str | Path) -> tuple[DenseNetwork, ScalerParams, dict]:
    nets, meta = load_checkpoint(path)
    if meta.get("kind") != "dnn":
        raise ValueError(f"{path} is not a DNN checkpoint")
    return nets["net"], ScalerParams.from_dict(meta["scaler"]), meta


def save_ensemble(directory: str | Path, ens: Ensemble, scaler: ScalerParams,
                  config: DnnConfig | None = None) -> Path:
    """Write one checkpoint per member plus ``ensemble.json`` listing paths and seeds."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (net, seed) in enumerate(zip(ens.members, ens.seeds)):
        name = f"dnn_member_{i:02d}.npz"
        save_dnn(directory / name, net, scaler, seed, _with_seed(config, seed) if config else None)
        entries.append({"path": name, "seed": int(seed)})
    manifest = directory / "ensemble.json"
    manifest.write_text(json.dumps({"members": entries}, indent=2) + "\n")
    return manifest


def load_ensemble(manifest: str | Path) -> tuple[Ensemble, ScalerParams]:
    manifest = Path(manifest)
    doc = json.loads(manifest.read_text())
    members, seeds, scaler = [], [], None
    for entry in doc["members"]:
        net, sc, meta = load_dnn(manifest.parent / entry["path"])
        if meta["seed"] != entry["seed"]:
            raise ValueError(f"{entry['path']}: seed {meta['seed']} != manifest seed {entry['seed']}")
        if scaler is None:
            scaler = sc
        elif not scaler.equals(sc):
            raise ValueError(f"{entry['path']}: scaler differs from other members")
        members.append(net)
        seeds.append(entry["seed"])
    return Ensemble(members, seeds), scaler
