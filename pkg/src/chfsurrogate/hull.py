"""Convex-hull membership of query points by phase-1 linear feasibility.

A query q lies in conv(P) iff some lambda >= 0 with sum(lambda) = 1 satisfies
P^T lambda = q. Each query is a small LP (d + 1 equality rows, n columns)
solved by a dense-tableau phase-1 simplex with Bland's rule; no facets of
the hull are ever built.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import ErrorReport, error_report

DEFAULT_TOLERANCE = 1e-8
PIVOT_TOL = 1e-11


class HullSolveError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class HullProblem:
    training_points: np.ndarray  # (n, d)
    query: np.ndarray  # (d,)
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        P = np.asarray(self.training_points, dtype=np.float64)
        q = np.asarray(self.query, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] == 0:
            raise ValueError("training_points must be a non-empty (n, d) array")
        if q.shape != (P.shape[1],):
            raise ValueError(f"query shape {q.shape} does not match dimension {P.shape[1]}")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(q))):
            raise ValueError("hull inputs must be finite")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")
        object.__setattr__(self, "training_points", P)
        object.__setattr__(self, "query", q)


@dataclass
class FeasibilityResult:
    gap: float  # optimal phase-1 objective: sum of artificial variables
    weights: np.ndarray  # convex weights found (meaningful when gap is small)
    iterations: int


def phase_one(points: np.ndarray, query: np.ndarray, max_iter: int | None = None) -> FeasibilityResult:
    """Minimize the total infeasibility of P^T lam = q, 1^T lam = 1, lam >= 0."""
    P = np.asarray(points, dtype=np.float64)
    n, d = P.shape
    m = d + 1
    A = np.vstack([P.T, np.ones((1, n))])
    b = np.append(np.asarray(query, dtype=np.float64), 1.0)
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # tableau rows 0..m-1 are constraints, row m is the reduced-cost row;
    # columns 0..n-1 are lambda, n..n+m-1 artificials, last column the rhs
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = np.arange(n, n + m)

    if max_iter is None:
        max_iter = 50 * (n + m) + 1000
    it = 0
    while True:
        cost = T[m, :n + m]
        candidates = np.flatnonzero(cost < -PIVOT_TOL)
        if candidates.size == 0:
            break
        if it >= max_iter:
            raise HullSolveError(f"phase-1 simplex exceeded {max_iter} iterations")
        j = candidates[0]  # Bland: lowest-index improving column
        col = T[:m, j]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            # cannot happen for a phase-1 problem (objective bounded below by 0)
            raise HullSolveError("phase-1 simplex found an unbounded direction")
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
        r = ties[np.argmin(basis[ties])]  # Bland: lowest-index leaving variable
        T[r] /= T[r, j]
        others = np.arange(m + 1) != r
        T[others] -= np.outer(T[others, j], T[r])
        basis[r] = j
        it += 1

    lam = np.zeros(n)
    in_x = basis < n
    lam[basis[in_x]] = np.maximum(T[:m, -1][in_x], 0.0)
    gap = float(max(-T[m, -1], 0.0))
    return FeasibilityResult(gap, lam, it)


def _outside_box(P: np.ndarray, q: np.ndarray, tol: float) -> bool:
    return bool(np.any(q > P.max(axis=0) + tol) or np.any(q < P.min(axis=0) - tol))


def in_hull(prob: HullProblem) -> bool:
    """True when the query is a convex combination of the training points.

    Points whose phase-1 gap is within ``tolerance`` (the boundary) count as
    inside. Queries beyond the bounding box by more than the tolerance are
    rejected without solving an LP; the LP would reach the same answer.
    """
    P, q, tol = prob.training_points, prob.query, prob.tolerance
    if _outside_box(P, q, tol):
        return False
    return phase_one(P, q).gap <= tol


@dataclass
class HullSplit:
    inside_indices: list[int]
    outside_indices: list[int]
    failed_indices: list[int] = field(default_factory=list)
    failures: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        a, b, f = set(self.inside_indices), set(self.outside_indices), set(self.failed_indices)
        if a & b or a & f or b & f:
            raise ValueError("hull split index sets overlap")

    @property
    def n_inside(self) -> int:
        return len(self.inside_indices)

    @property
    def n_outside(self) -> int:
        return len(self.outside_indices)

    def labels(self, n: int) -> list[str]:
        out = ["?"] * n
        for i in self.inside_indices:
            out[i] = "inside"
        for i in self.outside_indices:
            out[i] = "outside"
        for i in self.failed_indices:
            out[i] = "failed"
        if "?" in out:
            raise ValueError("hull split does not cover every test row")
        return out


def _classify_chunk(args):
    P, Q, tol, offset = args
    result = []
    for k, q in enumerate(Q):
        try:
            result.append((offset + k, in_hull(HullProblem(P, q, tol)), None))
        except HullSolveError as e:
            result.append((offset + k, None, str(e)))
    return result


def split_by_hull(train_conditions: np.ndarray, test_conditions: np.ndarray,
                  tolerance: float = DEFAULT_TOLERANCE, workers: int = 1) -> HullSplit:
    """Classify every test row against the hull of the training rows.

    Pass standardized coordinates; membership is affine invariant but the LP
    is better conditioned on unit-scale columns. Rows whose LP fails are put
    in ``failed_indices`` with the solver message, never guessed.
    """
    P = np.asarray(train_conditions, dtype=np.float64)
    Q = np.asarray(test_conditions, dtype=np.float64)
    if P.ndim != 2 or Q.ndim != 2 or P.shape[1] != Q.shape[1]:
        raise ValueError("training and test conditions need the same column count")
    if workers > 1 and len(Q) > 1:
        chunks = np.array_split(np.arange(len(Q)), workers)
        jobs = [(P, Q[c], tolerance, int(c[0])) for c in chunks if c.size]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [r for part in pool.map(_classify_chunk, jobs) for r in part]
    else:
        rows = _classify_chunk((P, Q, tolerance, 0))
    inside, outside, failed, msgs = [], [], [], {}
    for i, flag, err in rows:
        if err is not None:
            failed.append(i)
            msgs[i] = err
        elif flag:
            inside.append(i)
        else:
            outside.append(i)
    return HullSplit(inside, outside, failed, msgs)


@dataclass
class SubsetReport:
    label: str
    n: int
    report: ErrorReport | None  # None when the subset is empty

    @property
    def empty(self) -> bool:
        return self.report is None

    def to_dict(self) -> dict:
        return {"label": self.label, "n": self.n, "empty": self.empty,
                "report": self.report.to_dict() if self.report else None}


def split_error_report(split: HullSplit, predicted, truth) -> tuple[SubsetReport, SubsetReport]:
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("predicted and truth differ in shape")
    out = []
    for label, idx in (("inside", split.inside_indices), ("outside", split.outside_indices)):
        idx = np.asarray(idx, dtype=np.intp)
        if idx.size and (idx.max() >= len(t) or idx.min() < 0):
            raise IndexError(f"{label} indices out of range for {len(t)} rows")
        rep = error_report(p[idx], t[idx]) if idx.size else None
        out.append(SubsetReport(label, int(idx.size), rep))
    return out[0], out[1]


def write_split(path: str | Path, split: HullSplit, n: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["test_index", "label"])
        for i, lab in enumerate(split.labels(n)):
            w.writerow([i, lab])


def read_split(path: str | Path) -> HullSplit:
    inside, outside, failed = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            {"inside": inside, "outside": outside, "failed": failed}[row["label"]].append(int(row["test_index"]))
    return HullSplit(inside, outside, failed)
