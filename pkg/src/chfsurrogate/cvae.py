"""Conditional variational autoencoder for CHF given thermal-hydraulic conditions.

Encoder: (x, c) -> (mean, log_variance) of q(z | x, c).
Decoder: (z, c) -> reconstructed x.
Prior:   N(0, I), independent of c.

Loss per datum is squared reconstruction error (unit-variance Gaussian
likelihood, one reparameterized draw) plus ``kl_weight`` times the analytic
KL to the prior, averaged over the batch.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import N_CONDITIONS, ScalerParams
from .nn import (AdamState, DenseNetwork, NumericalError, Rng, adam_step, backward, forward,
                 forward_trace, init_network, load_checkpoint, minibatches, save_checkpoint)

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass(frozen=True)
class LatentParams:
    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64)
        lv = np.asarray(self.log_variance, dtype=np.float64)
        if m.shape != lv.shape:
            raise ValueError(f"mean {m.shape} and log_variance {lv.shape} differ in shape")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(lv))):
            raise ValueError("latent parameters must be finite")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "log_variance", lv)


@dataclass(frozen=True)
class CvaeConfig:
    # epochs and batch size are the published protocol; latent size, width,
    # lr and kl weight were never reported and are repo defaults
    latent_dim: int = 2
    hidden_width: int = 128
    epochs: int = 230
    batch_size: int = 76
    initial_lr: float = 1e-3
    kl_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.kl_weight > 0:
            raise ValueError("kl_weight must be > 0")
        if self.latent_dim < 1 or self.hidden_width < 1 or not self.initial_lr > 0:
            raise ValueError("latent_dim, hidden_width and initial_lr must be positive")


@dataclass(eq=False)
class CvaeModel:
    encoder: DenseNetwork
    decoder: DenseNetwork
    latent_dim: int
    scaler: ScalerParams | None = None

    def __post_init__(self):
        L = self.latent_dim
        if self.encoder.input_dim != 1 + N_CONDITIONS or self.encoder.output_dim != 2 * L:
            raise ValueError(f"encoder must map {1 + N_CONDITIONS} -> {2 * L}, got "
                             f"{self.encoder.input_dim} -> {self.encoder.output_dim}")
        if self.decoder.input_dim != L + N_CONDITIONS or self.decoder.output_dim != 1:
            raise ValueError(f"decoder must map {L + N_CONDITIONS} -> 1, got "
                             f"{self.decoder.input_dim} -> {self.decoder.output_dim}")

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def with_params(self, params) -> "CvaeModel":
        k = len(self.encoder.params())
        return CvaeModel(self.encoder.with_params(params[:k]), self.decoder.with_params(params[k:]),
                         self.latent_dim, self.scaler)

    def equals(self, other: "CvaeModel") -> bool:
        return (self.latent_dim == other.latent_dim and self.encoder.equals(other.encoder)
                and self.decoder.equals(other.decoder))


def init_cvae(config: CvaeConfig, rng: Rng, scaler: ScalerParams | None = None) -> CvaeModel:
    """Four fully connected layers on each side: three hidden relu layers and a linear head."""
    h, L = config.hidden_width, config.latent_dim
    enc = init_network([1 + N_CONDITIONS, h, h, h, 2 * L], None, rng)
    dec = init_network([L + N_CONDITIONS, h, h, h, 1], None, rng)
    return CvaeModel(enc, dec, L, scaler)


def _encoder_input(x, c) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != N_CONDITIONS:
        raise ValueError(f"conditions must have length {N_CONDITIONS}, got {c.shape}")
    return np.concatenate([x.reshape(c.shape[:-1] + (1,)), c], axis=-1)


def encode(model: CvaeModel, x, c) -> LatentParams:
    """Posterior parameters for one datum (x scalar, c 7-vector) or a batch."""
    out = forward(model.encoder, _encoder_input(x, c))
    L = model.latent_dim
    return LatentParams(out[..., :L], np.clip(out[..., L:], LOGVAR_MIN, LOGVAR_MAX))


def reparameterize(lat: LatentParams, rng: Rng | None = None, eps: np.ndarray | None = None) -> np.ndarray:
    if eps is None:
        eps = rng.normal(size=lat.mean.shape)
    lv = np.clip(lat.log_variance, LOGVAR_MIN, LOGVAR_MAX)
    return lat.mean + np.exp(0.5 * lv) * eps


def _exp_minus_one_minus(lv: np.ndarray) -> np.ndarray:
    """exp(lv) - 1 - lv without cancellation; Taylor series near zero."""
    lv = np.asarray(lv, dtype=np.float64)
    small = np.abs(lv) < 1e-4
    series = 0.5 * lv * lv * (1.0 + lv / 3.0 + lv * lv / 12.0)
    with np.errstate(over="ignore"):
        direct = np.expm1(lv) - lv
    return np.where(small, series, direct)


def kl_divergence(lat: LatentParams) -> float | np.ndarray:
    """KL(N(mean, exp(log_variance)) || N(0, I)), summed over the last axis."""
    m, lv = lat.mean, lat.log_variance
    kl = 0.5 * np.sum(m * m + _exp_minus_one_minus(lv), axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


def decode(model: CvaeModel, z, c) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    return forward(model.decoder, np.concatenate([z, c], axis=-1))[..., 0]


@dataclass
class CvaeLoss:
    total: float
    reconstruction: float
    kl: float
    grads: list[np.ndarray] | None = None


def cvae_loss(model: CvaeModel, x, c, rng: Rng | None = None, kl_weight: float = 1.0,
              eps: np.ndarray | None = None, with_grads: bool = True) -> CvaeLoss:
    """Batch loss and gradients w.r.t. ``model.params()`` (encoder first).

    ``eps`` fixes the standard-normal draws (shape (n, latent_dim)); otherwise
    they come from ``rng``.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    n, L = x.size, model.latent_dim
    if n == 0:
        raise ValueError("empty batch")
    if c.shape != (n, N_CONDITIONS):
        raise ValueError(f"conditions shape {c.shape} does not match batch of {n}")
    if eps is None:
        eps = rng.normal(size=(n, L))

    enc_out, enc_trace = forward_trace(model.encoder, _encoder_input(x, c))
    mu = enc_out[:, :L]
    raw_lv = enc_out[:, L:]
    lv = np.clip(raw_lv, LOGVAR_MIN, LOGVAR_MAX)
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    dec_out, dec_trace = forward_trace(model.decoder, np.concatenate([z, c], axis=1))
    diff = dec_out[:, 0] - x
    recon = float(np.mean(diff * diff))
    kl_each = 0.5 * np.sum(mu * mu + _exp_minus_one_minus(lv), axis=1)
    kl = float(np.mean(kl_each))
    total = recon + kl_weight * kl
    if not np.isfinite(total):
        raise NumericalError("non-finite CVAE loss")
    if not with_grads:
        return CvaeLoss(total, recon, kl)

    g_dec, g_in = backward(model.decoder, None, (2.0 * diff / n)[:, None], dec_trace)
    g_z = g_in[:, :L]
    g_mu = g_z + kl_weight * mu / n
    g_lv = g_z * eps * std * 0.5 + kl_weight * 0.5 * np.expm1(lv) / n
    g_lv = np.where((raw_lv >= LOGVAR_MIN) & (raw_lv <= LOGVAR_MAX), g_lv, 0.0)
    g_enc, _ = backward(model.encoder, None, np.concatenate([g_mu, g_lv], axis=1), enc_trace)
    return CvaeLoss(total, recon, kl, g_enc + g_dec)


@dataclass
class CvaeHistory:
    train_recon: list[float] = field(default_factory=list)
    train_kl: list[float] = field(default_factory=list)
    val_recon: list[float] = field(default_factory=list)
    val_kl: list[float] = field(default_factory=list)
    initial_val_recon: float = float("nan")
    initial_val_kl: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def _split_table(table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2 or t.shape[1] != N_CONDITIONS + 1:
        raise ValueError(f"expected a standardized (n, {N_CONDITIONS + 1}) table, got {t.shape}")
    return t[:, N_CONDITIONS], t[:, :N_CONDITIONS]


def _eval(model: CvaeModel, x, c, rng: Rng, kl_weight: float) -> CvaeLoss:
    return cvae_loss(model, x, c, rng, kl_weight, with_grads=False)


def train_cvae(config: CvaeConfig, train: np.ndarray, val: np.ndarray,
               scaler: ScalerParams | None = None) -> tuple[CvaeModel, CvaeHistory]:
    x, c = _split_table(train)
    xv, cv = _split_table(val)
    if x.size == 0:
        raise ValueError("training table is empty")
    rng = Rng(config.seed)
    model = init_cvae(config, rng.child(1), scaler)
    batch_rng, noise_rng = rng.child(2), rng.child(3)
    params = model.params()
    state = AdamState.fresh(params, lr=config.initial_lr)
    hist = CvaeHistory()
    if xv.size:
        # validation draws use a fixed stream so epochs are comparable
        ev = _eval(model, xv, cv, rng.child(4), config.kl_weight)
        hist.initial_val_recon, hist.initial_val_kl = ev.reconstruction, ev.kl

    for epoch in range(config.epochs):
        rec_sum = kl_sum = 0.0
        for idx in minibatches(x.size, config.batch_size, batch_rng):
            try:
                res = cvae_loss(model, x[idx], c[idx], noise_rng, config.kl_weight)
            except NumericalError as e:
                raise NumericalError(f"epoch {epoch}: {e}") from e
            params, state = adam_step(params, res.grads, state)
            model = model.with_params(params)
            rec_sum += res.reconstruction * len(idx)
            kl_sum += res.kl * len(idx)
        hist.train_recon.append(rec_sum / x.size)
        hist.train_kl.append(kl_sum / x.size)
        if xv.size:
            try:
                ev = _eval(model, xv, cv, rng.child(4), config.kl_weight)
            except NumericalError as e:
                raise NumericalError(f"epoch {epoch}: {e}") from e
            hist.val_recon.append(ev.reconstruction)
            hist.val_kl.append(ev.kl)
    return model, hist


def generate(model: CvaeModel, c, n_samples: int, rng: Rng, chunk: int = 256) -> np.ndarray:
    """Draw CHF samples (kW/m^2) at physical conditions using z ~ N(0, I).

    ``c`` is one 7-vector (returns shape (n_samples,)) or an (m, 7) array
    (returns (m, n_samples)). Conditions are processed in chunks of ``chunk``
    rows, each consuming (rows, n_samples, latent_dim) normals in order.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if model.scaler is None:
        raise ValueError("model has no scaler; cannot map physical conditions")
    c = np.asarray(c, dtype=np.float64)
    single = c.ndim == 1
    c2 = np.atleast_2d(c)
    if c2.shape[1] != N_CONDITIONS:
        raise ValueError(f"conditions must have length {N_CONDITIONS}")
    if not np.all(np.isfinite(c2)):
        raise ValueError("conditions must be finite")
    cs = model.scaler.transform_conditions(c2)
    L = model.latent_dim
    out = np.empty((len(cs), n_samples))
    for start in range(0, len(cs), chunk):
        block = cs[start:start + chunk]
        m = len(block)
        z = rng.normal(size=(m, n_samples, L))
        cond = np.broadcast_to(block[:, None, :], (m, n_samples, N_CONDITIONS))
        inp = np.concatenate([z, cond], axis=2).reshape(m * n_samples, L + N_CONDITIONS)
        y = forward(model.decoder, inp)[:, 0].reshape(m, n_samples)
        out[start:start + m] = model.scaler.inverse_chf(y)
    return out[0] if single else out


def save_cvae(path: str | Path, model: CvaeModel, seed: int, config: CvaeConfig | None = None) -> None:
    meta = {"kind": "cvae", "seed": int(seed), "latent_dim": model.latent_dim,
            "scaler": model.scaler.to_dict() if model.scaler else None,
            "config": asdict(config) if config else None}
    save_checkpoint(path, {"encoder": model.encoder, "decoder": model.decoder}, meta)


def load_cvae(path: str | Path) -> tuple[CvaeModel, dict]:
    nets, meta = load_checkpoint(path)
    if meta.get("kind") != "cvae":
        raise ValueError(f"{path} is not a CVAE checkpoint")
    scaler = ScalerParams.from_dict(meta["scaler"]) if meta.get("scaler") else None
    return CvaeModel(nets["encoder"], nets["decoder"], int(meta["latent_dim"]), scaler), meta
