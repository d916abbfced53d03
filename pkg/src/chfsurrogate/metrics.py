"""Sample statistics, relative standard deviation and error tables.

Conventions used everywhere in the package:

* standard deviations are population (divide by n),
* "fraction above 10%" counts strictly greater errors,
* errors are computed on physical (destandardized) CHF values.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

STD_CONVENTION = "population (ddof=0)"
TIE_RULE = "strict: error > 10%"
ERROR_THRESHOLD_PCT = 10.0


@dataclass(frozen=True)
class SampleStats:
    """Mean and spread of repeated predictions at one or many conditions.

    ``mu_samples`` and ``sigma_samples`` are scalars for a single condition
    or arrays with one entry per condition.
    """

    mu_samples: float | np.ndarray
    sigma_samples: float | np.ndarray
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("SampleStats needs n >= 1")
        if np.any(np.asarray(self.sigma_samples) < 0):
            raise ValueError("sigma_samples must be non-negative")


def sample_stats(samples: np.ndarray, axis: int = -1) -> SampleStats:
    s = np.asarray(samples, dtype=np.float64)
    if s.shape[axis] < 1:
        raise ValueError("no samples")
    mu = s.mean(axis=axis)
    sigma = np.sqrt(np.mean((s - np.expand_dims(mu, axis)) ** 2, axis=axis))
    # float summation can leave a tiny spread on identical samples; pin those to 0
    first = np.take(s, [0], axis=axis)
    constant = np.all(s == first, axis=axis)
    mu = np.where(constant, np.squeeze(first, axis=axis), mu)
    sigma = np.where(constant, 0.0, sigma)
    if mu.ndim == 0:
        mu, sigma = float(mu), float(sigma)
    return SampleStats(mu, sigma, s.shape[axis])


def relative_std(stats: SampleStats) -> float | np.ndarray:
    mu = np.asarray(stats.mu_samples, dtype=np.float64)
    if np.any(mu == 0):
        raise ZeroDivisionError("relative std undefined where mu_samples == 0")
    out = np.asarray(stats.sigma_samples, dtype=np.float64) / mu * 100.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ErrorReport:
    mean_abs_rel_error: float
    max_abs_rel_error: float
    std_abs_rel_error: float
    frac_above_10pct: float
    r_squared: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def abs_rel_errors(predicted: np.ndarray, truth: np.ndarray) -> np.ndarray:
    p = np.asarray(predicted, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} truths")
    if p.size == 0:
        raise ValueError("empty input")
    zero = np.flatnonzero(t == 0)
    if zero.size:
        raise ZeroDivisionError(f"truth is zero at index {int(zero[0])}")
    return np.abs(p - t) / np.abs(t) * 100.0


def r_squared(predicted: np.ndarray, truth: np.ndarray) -> float:
    p = np.asarray(predicted, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    ss_res = np.sum((t - p) ** 2)
    ss_tot = np.sum((t - t.mean()) ** 2)
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else float("-inf")
    return float(1.0 - ss_res / ss_tot)


def error_report(predicted: np.ndarray, truth: np.ndarray) -> ErrorReport:
    err = abs_rel_errors(predicted, truth)
    return ErrorReport(
        mean_abs_rel_error=float(err.mean()),
        max_abs_rel_error=float(err.max()),
        std_abs_rel_error=float(err.std()),
        frac_above_10pct=float(np.count_nonzero(err > ERROR_THRESHOLD_PCT) / err.size * 100.0),
        r_squared=r_squared(predicted, truth),
        n=int(err.size),
    )


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError("length mismatch")
    if x.size < 2:
        raise ValueError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise ValueError("pearson undefined for a zero-variance input")
    r = np.dot(dx, dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def correlation_table(conditions: np.ndarray, chf: np.ndarray,
                      names: Sequence[str] | None = None) -> dict[str, float]:
    c = np.asarray(conditions, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != np.asarray(chf).size:
        raise ValueError("conditions and chf row counts differ")
    names = list(names) if names is not None else [f"c{j}" for j in range(c.shape[1])]
    return {name: pearson(c[:, j], chf) for j, name in enumerate(names)}


def fmt_sig(x: float, sig: int = 4) -> str:
    """Format with ``sig`` significant figures for the plain-text tables."""
    if not np.isfinite(x):
        return str(x)
    return f"{x:#.{sig}g}".rstrip(".")
