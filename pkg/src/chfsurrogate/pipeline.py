"""End-to-end run: ingest -> split -> train -> generate/predict -> UQ -> hull split -> tables.

A run lives in one output directory::

    split.json, scaler.json, manifest.json
    checkpoints/cvae.npz, checkpoints/ensemble.json, checkpoints/dnn_member_XX.npz
    history/*.json
    metrics/metrics.json, metrics/tables.txt, metrics/parity.csv,
    metrics/sample_stats.csv, metrics/hull_split.csv, metrics/correlations.json
    plots/*.svg
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .cvae import CvaeConfig, generate, load_cvae, save_cvae, train_cvae
from .dataset import (CONDITION_COLUMNS, Dataset, DataError, ScalerParams, SplitSpec, fit_scaler,
                      load_chf_csv, split_indices, synthetic_chf)
from .dnn import DnnConfig, load_ensemble, member_predictions, save_ensemble, train_ensemble
from .hull import DEFAULT_TOLERANCE, split_by_hull, split_error_report, write_split
from .metrics import (STD_CONVENTION, TIE_RULE, correlation_table, error_report, fmt_sig,
                      relative_std, sample_stats)
from .nn import Rng

# Reference values (NRC data), printed beside the run's own numbers.
REFERENCE_TABLE1 = {
    "DNN": {"mean_abs_rel_error": 1.8473, "max_abs_rel_error": 31.056, "std_abs_rel_error": 2.4065,
            "frac_above_10pct": 1.3426, "r_squared": 0.9990},
    "CVAE": {"mean_abs_rel_error": 1.4907, "max_abs_rel_error": 24.962, "std_abs_rel_error": 1.8593,
             "frac_above_10pct": 0.5695, "r_squared": 0.9987},
}
REFERENCE_TABLE2 = {
    "DNN": {"mean_abs_rel_error": 0.8868, "max_abs_rel_error": 37.307, "std_abs_rel_error": 1.5364,
            "mean_rel_std": 1.8023, "max_rel_std": 29.651, "frac_above_10pct": 0.3662},
    "CVAE": {"mean_abs_rel_error": 1.4797, "max_abs_rel_error": 22.334, "std_abs_rel_error": 1.8496,
             "mean_rel_std": 0.2579, "max_rel_std": 5.5714, "frac_above_10pct": 0.5695},
}
REFERENCE_TABLE3 = {
    "CVAE": {"inside": {"mean_abs_rel_error": 1.2295, "max_abs_rel_error": 9.8421,
                        "std_abs_rel_error": 1.1734, "frac_above_10pct": 0.0},
             "outside": {"mean_abs_rel_error": 1.6653, "max_abs_rel_error": 22.334,
                         "std_abs_rel_error": 2.2038, "frac_above_10pct": 0.9922}},
    "DNN": {"inside": {"mean_abs_rel_error": 0.7364, "max_abs_rel_error": 7.143,
                       "std_abs_rel_error": 0.8139, "frac_above_10pct": 0.0},
            "outside": {"mean_abs_rel_error": 0.9983, "max_abs_rel_error": 37.31,
                        "std_abs_rel_error": 1.8407, "frac_above_10pct": 0.6442}},
}
REFERENCE_HULL_COUNTS = {"inside": 1047, "outside": 1411}

ROW_LABELS = {
    "mean_abs_rel_error": "mu_error (%)",
    "max_abs_rel_error": "Max_error (%)",
    "std_abs_rel_error": "Std_error (%)",
    "mean_rel_std": "Mean relative std (%)",
    "max_rel_std": "Max relative std (%)",
    "frac_above_10pct": "F_error > 10% (%)",
    "r_squared": "R^2",
}

GENERATION_STREAM = 11


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


@dataclass
class SyntheticSpec:
    n: int = 6250
    seed: int = 7
    noise: float = 0.0


@dataclass
class RunConfig:
    dataset: str | None = None
    output_dir: str = "run"
    seed: int = 0
    workers: int = 1
    split: SplitSpec = field(default_factory=SplitSpec)
    dnn: DnnConfig = field(default_factory=DnnConfig)
    cvae: CvaeConfig = field(default_factory=CvaeConfig)
    ensemble_size: int = 20  # published ensemble size
    cvae_samples: int = 200  # published number of latent draws per condition
    hull_tolerance: float = DEFAULT_TOLERANCE
    synthetic: SyntheticSpec | None = None

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be >= 2")
        if self.cvae_samples < 1:
            raise ValueError("cvae_samples must be >= 1")
        if self.hull_tolerance < 0:
            raise ValueError("hull_tolerance must be >= 0")
        if self.dataset is None and self.synthetic is None:
            raise ValueError("config needs either 'dataset' or 'synthetic'")

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict | None, **defaults):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for k, v in defaults.items():
        data.setdefault(k, v)
    return cls(**data)


def config_from_dict(doc: dict, seed_override: int | None = None,
                     output_override: str | None = None) -> RunConfig:
    """Build a RunConfig. Nested seeds default to the global seed; an override replaces all of them."""
    doc = dict(doc)
    seed = int(doc.get("seed", 0) if seed_override is None else seed_override)
    split_doc = dict(doc.pop("split", {}) or {})
    dnn_doc = dict(doc.pop("dnn", {}) or {})
    cvae_doc = dict(doc.pop("cvae", {}) or {})
    if seed_override is not None:
        split_doc["shuffle_seed"] = seed
        dnn_doc["seed"] = seed
        cvae_doc["seed"] = seed
    synth = doc.pop("synthetic", None)
    doc["seed"] = seed
    if output_override is not None:
        doc["output_dir"] = output_override
    return _build(
        RunConfig, doc,
        split=_build(SplitSpec, split_doc, shuffle_seed=seed),
        dnn=_build(DnnConfig, dnn_doc, seed=seed),
        cvae=_build(CvaeConfig, cvae_doc, seed=seed),
        synthetic=_build(SyntheticSpec, synth) if synth is not None else None,
    )


def load_config(path: str | Path, seed_override: int | None = None,
                output_override: str | None = None, workers: int | None = None) -> RunConfig:
    doc = json.loads(Path(path).read_text())
    cfg = config_from_dict(doc, seed_override, output_override)
    if workers is not None:
        cfg = replace(cfg, workers=int(workers))
    return cfg


def _dump(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset is not None:
        return load_chf_csv(cfg.dataset)
    s = cfg.synthetic
    return synthetic_chf(s.n, s.seed, s.noise)


@dataclass
class Partition:
    data: Dataset
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    scaler: ScalerParams

    def table(self, idx: np.ndarray) -> np.ndarray:
        return self.scaler.transform(self.data.values[idx])


def make_partition(cfg: RunConfig, data: Dataset | None = None) -> Partition:
    data = data if data is not None else load_dataset(cfg)
    tr, va, te = split_indices(len(data), cfg.split)
    # scaler sees the training partition only
    return Partition(data, tr, va, te, fit_scaler(data.values[tr]))


# -- manifest -----------------------------------------------------------------

def _rel(cfg: RunConfig, p: Path) -> str:
    return str(Path(p).resolve().relative_to(cfg.out.resolve()))


def update_manifest(cfg: RunConfig, stage: str, seconds: float, files: dict[str, list[Path]]) -> Path:
    path = cfg.out / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {"stages": {}}
    doc["library_version"] = __version__
    doc["config"] = cfg.to_dict()
    entry = {"seconds": round(seconds, 3)}
    for kind, paths in files.items():
        entry[kind] = sorted(_rel(cfg, p) for p in paths)
    doc["stages"][stage] = entry
    missing = [f for st in doc["stages"].values() for k, v in st.items() if isinstance(v, list)
               for f in v if not (cfg.out / f).exists()]
    if missing:
        raise FileNotFoundError(f"manifest references missing files: {missing}")
    return _dump(path, doc)


def validate_manifest(path: str | Path) -> dict:
    path = Path(path)
    doc = json.loads(path.read_text())
    for key in ("library_version", "config", "stages"):
        if key not in doc:
            raise ValueError(f"manifest lacks {key!r}")
    for stage, entry in doc["stages"].items():
        for kind, files in entry.items():
            if not isinstance(files, list):
                continue
            for f in files:
                if not (path.parent / f).exists():
                    raise FileNotFoundError(f"manifest stage {stage!r} lists missing {kind} file {f}")
    return doc


# -- stages -------------------------------------------------------------------

def _stage(name: str):
    def wrap(fn):
        def run(*a, **kw):
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except Exception as e:  # noqa: BLE001 - re-raised with stage context
                raise StageError(name, e) from e
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


@_stage("train")
def run_train(cfg: RunConfig) -> Path:
    """Fit the CVAE and the DNN ensemble; member 0 doubles as the single DNN."""
    t0 = time.perf_counter()
    out = cfg.out
    ck = out / "checkpoints"
    ck.mkdir(parents=True, exist_ok=True)
    part = make_partition(cfg)
    written = [
        _dump(out / "split.json", {"n": len(part.data), "source": part.data.source_tag,
                                   "train": part.train.tolist(), "val": part.val.tolist(),
                                   "test": part.test.tolist()}),
        _dump(out / "scaler.json", part.scaler.to_dict()),
    ]
    train_t, val_t = part.table(part.train), part.table(part.val)

    model, chist = train_cvae(cfg.cvae, train_t, val_t, part.scaler)
    save_cvae(ck / "cvae.npz", model, cfg.cvae.seed, cfg.cvae)
    written.append(_dump(out / "history" / "cvae.json", chist.to_dict()))

    ens = train_ensemble(cfg.dnn, cfg.ensemble_size, cfg.dnn.seed, train_t, val_t, workers=cfg.workers)
    manifest = save_ensemble(ck, ens, part.scaler, cfg.dnn)
    for i, h in enumerate(ens.histories):
        written.append(_dump(out / "history" / f"dnn_member_{i:02d}.json", h.to_dict()))
    checkpoints = [ck / "cvae.npz", manifest] + [ck / f"dnn_member_{i:02d}.npz" for i in range(len(ens.members))]
    return update_manifest(cfg, "train", time.perf_counter() - t0,
                           {"checkpoints": checkpoints, "files": written})


def _load_models(cfg: RunConfig, part: Partition):
    ck = cfg.out / "checkpoints"
    for p in (ck / "cvae.npz", ck / "ensemble.json"):
        if not p.exists():
            raise FileNotFoundError(f"missing checkpoint {p}; run 'train' first")
    model, _ = load_cvae(ck / "cvae.npz")
    ens, ens_scaler = load_ensemble(ck / "ensemble.json")
    saved = ScalerParams.from_dict(json.loads((cfg.out / "scaler.json").read_text()))
    for name, sc in (("cvae", model.scaler), ("dnn ensemble", ens_scaler), ("refit on split", part.scaler)):
        if sc is None or not sc.equals(saved):
            raise DataError(f"checkpoint/scaler mismatch: {name} scaler differs from scaler.json")
    return model, ens


def _check_split(cfg: RunConfig, part: Partition) -> None:
    path = cfg.out / "split.json"
    if not path.exists():
        return
    doc = json.loads(path.read_text())
    if doc["n"] != len(part.data) or doc["test"] != part.test.tolist():
        raise DataError("dataset or split differs from the one used in training")


def compute_hull_split(cfg: RunConfig, part: Partition):
    return split_by_hull(part.scaler.transform_conditions(part.data.conditions[part.train]),
                         part.scaler.transform_conditions(part.data.conditions[part.test]),
                         cfg.hull_tolerance, workers=cfg.workers)


@_stage("hull-split")
def run_hull_split(cfg: RunConfig) -> Path:
    t0 = time.perf_counter()
    part = make_partition(cfg)
    split = compute_hull_split(cfg, part)
    path = cfg.out / "metrics" / "hull_split.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_split(path, split, len(part.test))
    update_manifest(cfg, "hull-split", time.perf_counter() - t0, {"metrics": [path]})
    return path


def conventions(cfg: RunConfig) -> dict:
    return {
        "std": STD_CONVENTION,
        "tie_rule": TIE_RULE,
        "seed": cfg.seed,
        "errors": "absolute relative error in percent, physical units (kW/m^2)",
        "latent_sampling": "z ~ N(0, I) prior",
        "dnn": asdict(cfg.dnn),
        "cvae": asdict(cfg.cvae),
        "ensemble_size": cfg.ensemble_size,
        "cvae_samples": cfg.cvae_samples,
        "hull_tolerance": cfg.hull_tolerance,
    }


def evaluate_arrays(cfg: RunConfig, part: Partition, model, ens) -> dict:
    """All evaluation numbers for the test partition, as plain arrays and reports."""
    cond = part.data.conditions[part.test]
    truth = part.data.chf[part.test]
    members = member_predictions(ens, cond, part.scaler)
    dnn_single = members[0]
    dnn_stats = sample_stats(members, axis=0)
    samples = generate(model, cond, cfg.cvae_samples, Rng(cfg.cvae.seed, GENERATION_STREAM))
    cvae_single = samples[:, 0]
    cvae_stats = sample_stats(samples, axis=1)
    hsplit = compute_hull_split(cfg, part)
    return dict(cond=cond, truth=truth, dnn_single=dnn_single, dnn_stats=dnn_stats,
                cvae_single=cvae_single, cvae_stats=cvae_stats, hull=hsplit)


def build_metrics(cfg: RunConfig, ev: dict) -> dict:
    truth = ev["truth"]
    dnn_rs = relative_std(ev["dnn_stats"])
    cvae_rs = relative_std(ev["cvae_stats"])

    def uq_row(mu, rs):
        rep = error_report(mu, truth).to_dict()
        rep["mean_rel_std"] = float(np.mean(rs))
        rep["max_rel_std"] = float(np.max(rs))
        return rep

    hsplit = ev["hull"]
    t3 = {}
    for name, mu in (("DNN", ev["dnn_stats"].mu_samples), ("CVAE", ev["cvae_stats"].mu_samples)):
        inside, outside = split_error_report(hsplit, mu, truth)
        t3[name] = {"inside": inside.to_dict(), "outside": outside.to_dict()}

    names = list(CONDITION_COLUMNS)
    corr = {
        "true": correlation_table(ev["cond"], truth, names),
        "dnn_predicted": correlation_table(ev["cond"], ev["dnn_single"], names),
        "cvae_generated": correlation_table(ev["cond"], ev["cvae_single"], names),
    }
    return {
        "conventions": conventions(cfg),
        "n_test": int(truth.size),
        "table1": {"DNN": error_report(ev["dnn_single"], truth).to_dict(),
                   "CVAE": error_report(ev["cvae_single"], truth).to_dict()},
        "table2": {"DNN": uq_row(ev["dnn_stats"].mu_samples, dnn_rs),
                   "CVAE": uq_row(ev["cvae_stats"].mu_samples, cvae_rs)},
        "table3": t3,
        "hull_counts": {"inside": hsplit.n_inside, "outside": hsplit.n_outside,
                        "failed": len(hsplit.failed_indices)},
        "correlations": corr,
    }


def _table(title: str, rows: list[str], cols: list[tuple[str, dict]]) -> list[str]:
    width = max(len(ROW_LABELS[r]) for r in rows) + 2
    lines = [title, "Metric".ljust(width) + "".join(h.rjust(14) for h, _ in cols)]
    for r in rows:
        cells = []
        for _, d in cols:
            v = d.get(r) if d else None
            cells.append(("-" if v is None else fmt_sig(v)).rjust(14))
        lines.append(ROW_LABELS[r].ljust(width) + "".join(cells))
    return lines


def render_tables(metrics: dict) -> str:
    conv = metrics["conventions"]
    head = [f"# std: {conv['std']}; tie rule: {conv['tie_rule']}; seed: {conv['seed']}; "
            f"latent sampling: {conv['latent_sampling']}",
            f"# DNN widths {list(conv['dnn']['hidden_layer_widths'])}, lr {conv['dnn']['initial_lr']}, "
            f"batch {conv['dnn']['batch_size']}; CVAE latent {conv['cvae']['latent_dim']}, "
            f"width {conv['cvae']['hidden_width']}, kl_weight {conv['cvae']['kl_weight']}",
            f"# test rows: {metrics['n_test']}", ""]
    r1 = ["mean_abs_rel_error", "max_abs_rel_error", "std_abs_rel_error", "frac_above_10pct", "r_squared"]
    t1 = metrics["table1"]
    out = head + _table("Table 1: absolute relative errors (single DNN, single CVAE draw)", r1,
                        [("DNN", t1["DNN"]), ("DNN ref", REFERENCE_TABLE1["DNN"]),
                         ("CVAE", t1["CVAE"]), ("CVAE ref", REFERENCE_TABLE1["CVAE"])])
    r2 = ["mean_abs_rel_error", "max_abs_rel_error", "std_abs_rel_error", "mean_rel_std",
          "max_rel_std", "frac_above_10pct"]
    t2 = metrics["table2"]
    out += [""] + _table("Table 2: absolute relative errors with UQ (sample means)", r2,
                         [("DNN", t2["DNN"]), ("DNN ref", REFERENCE_TABLE2["DNN"]),
                          ("CVAE", t2["CVAE"]), ("CVAE ref", REFERENCE_TABLE2["CVAE"])])
    hc = metrics["hull_counts"]
    out += ["", f"Hull split: {hc['inside']} inside / {hc['outside']} outside"
                f" (failed {hc['failed']}); reference split {REFERENCE_HULL_COUNTS['inside']} / "
                f"{REFERENCE_HULL_COUNTS['outside']}"]
    r3 = ["mean_abs_rel_error", "max_abs_rel_error", "std_abs_rel_error", "frac_above_10pct"]
    for name in ("CVAE", "DNN"):
        t3 = metrics["table3"][name]
        cols = []
        for side in ("inside", "outside"):
            cols.append((side, t3[side]["report"]))
            cols.append((f"{side} ref", REFERENCE_TABLE3[name][side]))
        out += [""] + _table(f"Table 3 ({name}): errors inside/outside the training hull", r3, cols)
    out += ["", "Pearson correlation with CHF (test set)",
            "Parameter".ljust(12) + "".join(k.rjust(16) for k in metrics["correlations"])]
    for p in CONDITION_COLUMNS:
        out.append(p.ljust(12) + "".join(fmt_sig(metrics["correlations"][k][p]).rjust(16)
                                         for k in metrics["correlations"]))
    return "\n".join(out) + "\n"


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


@_stage("evaluate")
def run_evaluate(cfg: RunConfig) -> Path:
    t0 = time.perf_counter()
    part = make_partition(cfg)
    _check_split(cfg, part)
    model, ens = _load_models(cfg, part)
    ev = evaluate_arrays(cfg, part, model, ens)
    metrics = build_metrics(cfg, ev)
    md = cfg.out / "metrics"
    md.mkdir(parents=True, exist_ok=True)
    files = [_dump(md / "metrics.json", metrics)]
    (md / "tables.txt").write_text(render_tables(metrics))
    files.append(md / "tables.txt")
    files.append(_dump(md / "correlations.json", metrics["correlations"]))
    n = len(part.test)
    labels = ev["hull"].labels(n)
    write_split(md / "hull_split.csv", ev["hull"], n)
    files.append(md / "hull_split.csv")
    ds, cs = ev["dnn_stats"], ev["cvae_stats"]
    files.append(_write_csv(
        md / "parity.csv",
        ["test_index", "true_chf", "dnn_pred", "cvae_gen", "dnn_ens_mean", "cvae_mean", "hull"],
        ((i, ev["truth"][i], ev["dnn_single"][i], ev["cvae_single"][i], ds.mu_samples[i],
          cs.mu_samples[i], labels[i]) for i in range(n))))
    drs, crs = relative_std(ds), relative_std(cs)
    files.append(_write_csv(
        md / "sample_stats.csv",
        ["test_index", "model", "mu_samples", "sigma_samples", "n", "rel_std_pct"],
        [r for i in range(n) for r in
         ((i, "DNN", ds.mu_samples[i], ds.sigma_samples[i], ds.n, drs[i]),
          (i, "CVAE", cs.mu_samples[i], cs.sigma_samples[i], cs.n, crs[i]))]))
    update_manifest(cfg, "evaluate", time.perf_counter() - t0, {"metrics": files})
    return md / "metrics.json"


@_stage("plot")
def run_plot(cfg: RunConfig) -> list[Path]:
    from .plots import plot_run

    t0 = time.perf_counter()
    paths = plot_run(cfg.out / "metrics", cfg.out / "plots")
    update_manifest(cfg, "plot", time.perf_counter() - t0, {"plots": paths})
    return paths
