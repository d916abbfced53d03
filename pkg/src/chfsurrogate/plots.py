"""Static SVG figures from a run's metric files."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed salt and no date keep the SVG bytes reproducible
matplotlib.rcParams["svg.hashsalt"] = "chfsurrogate"
SVG_META = {"Date": None}
MAX_BINS = 60


def histogram_bins(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to histogram")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return np.array([lo - 0.5, hi + 0.5])
    edges = np.histogram_bin_edges(v, bins="auto")
    if len(edges) - 1 > MAX_BINS:
        edges = np.linspace(lo, hi, MAX_BINS + 1)
    return edges


def parity_figure(truth, predictions: dict[str, np.ndarray], title: str = ""):
    """Predicted vs true CHF with the y = x line and +-10% bounds."""
    t = np.asarray(truth, dtype=np.float64)
    if t.size == 0:
        raise ValueError("empty parity data")
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, p in predictions.items():
        ax.scatter(t, np.asarray(p, dtype=np.float64), s=6, alpha=0.6, label=label)
    hi = max(float(t.max()), *(float(np.max(p)) for p in predictions.values())) * 1.05
    ref = np.array([0.0, hi])
    ax.plot(ref, ref, color="k", lw=1, label="y = x")
    ax.plot(ref, 1.1 * ref, color="r", ls="--", lw=1, label="+10%")
    ax.plot(ref, 0.9 * ref, color="r", ls="--", lw=1, label="-10%")
    ax.set_xlim(0, hi)
    ax.set_ylim(0, hi)
    ax.set_xlabel("True CHF (kW/m$^2$)")
    ax.set_ylabel("Predicted / generated CHF (kW/m$^2$)")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    return fig


def error_histogram_figure(errors: dict[str, np.ndarray], title: str = "", xlabel: str = "Relative error (%)"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, e in errors.items():
        e = np.asarray(e, dtype=np.float64)
        if e.size == 0:
            continue
        ax.hist(e, bins=histogram_bins(e), alpha=0.5, label=f"{label} (n={e.size})")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("Count")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def read_parity(path: str | Path) -> dict[str, np.ndarray]:
    cols: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for k, v in row.items():
                cols.setdefault(k, []).append(v)
    if not cols or not cols.get("true_chf"):
        raise ValueError(f"{path} has no rows")
    out = {k: np.array(v, dtype=np.float64) for k, v in cols.items() if k != "hull"}
    out["hull"] = np.array(cols.get("hull", ["?"] * len(cols["true_chf"])))
    return out


def plot_run(metrics_dir: str | Path, plot_dir: str | Path) -> list[Path]:
    d = read_parity(Path(metrics_dir) / "parity.csv")
    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    t = d["true_chf"]

    def rel(p):
        return (p - t) / t * 100.0

    paths = [
        _save(parity_figure(t, {"DNN": d["dnn_pred"], "CVAE": d["cvae_gen"]}, "Single DNN / single CVAE draw"),
              plot_dir / "parity.svg"),
        _save(parity_figure(t, {"DNN ensemble mean": d["dnn_ens_mean"], "CVAE sample mean": d["cvae_mean"]},
                            "UQ means"), plot_dir / "parity_uq.svg"),
        _save(error_histogram_figure({"DNN": rel(d["dnn_pred"]), "CVAE": rel(d["cvae_gen"])},
                                     "Relative error distribution"), plot_dir / "relative_error_hist.svg"),
    ]
    inside = d["hull"] == "inside"
    outside = d["hull"] == "outside"
    for name, key in (("CVAE", "cvae_mean"), ("DNN", "dnn_ens_mean")):
        r = rel(d[key])
        paths.append(_save(error_histogram_figure(
            {"inside hull": r[inside], "outside hull": r[outside]},
            f"{name}: relative error of sample means by hull membership"),
            plot_dir / f"hull_error_hist_{name.lower()}.svg"))
    return paths
