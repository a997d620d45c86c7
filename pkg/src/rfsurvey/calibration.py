"""Model-calibration weighting: one weight system, many survey variables.

Base weights d = 1/pi are moved as little as possible (chi-square or
raking pseudo-distance) subject to benchmark constraints: the realized
sample size expands to N, centered model-prediction columns hit their
population sums, and auxiliary columns hit known totals.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


class CalibrationError(Exception):
    """Infeasible, collinear, or non-convergent calibration problem."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class CalibrationProblem:
    """Constraint system: rows of ``h`` per sampled unit, one target per
    column, base weights d, and the pseudo-distance to minimize."""

    d: np.ndarray
    h: np.ndarray
    targets: np.ndarray
    distance: str = "chi_square"
    max_iter: int = 50
    tol: float = 1e-8
    weight_cap: float | None = None

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        h = np.atleast_2d(np.asarray(self.h, dtype=np.float64))
        t = np.atleast_1d(np.asarray(self.targets, dtype=np.float64))
        if h.shape[0] != d.shape[0]:
            raise CalibrationError("h must have one row per sampled unit")
        if h.shape[1] != t.shape[0]:
            raise CalibrationError("one target per h column required")
        if (d <= 0).any():
            raise CalibrationError("base weights must be positive")
        if not np.isfinite(t).all():
            raise CalibrationError("targets must be finite")
        if self.distance not in ("chi_square", "raking"):
            raise CalibrationError(f"unknown distance {self.distance!r}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "targets", t)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    weights: np.ndarray
    lam: np.ndarray
    iterations: int
    residuals: np.ndarray
    dropped_columns: tuple[int, ...] = ()
    capped_units: tuple[int, ...] = ()


def build_h(n_population, pi_s, predictions_s=(), predictions_u=(),
            aux_s=None, aux_totals=None):
    """Assemble constraint columns and targets.

    Per unit: (1, m1 - mbar1, ..., mq - mbarq, v1, ..., vq'), where mbar
    is the Hajek mean of each prediction column; targets are (N, sum over
    the population of each centered prediction, auxiliary totals).
    """
    pi_s = np.asarray(pi_s, dtype=np.float64)
    d = 1.0 / pi_s
    n = pi_s.shape[0]
    if len(predictions_s) != len(predictions_u):
        raise CalibrationError("need matching sample and population predictions")
    cols = [np.ones(n)]
    targets = [float(n_population)]
    dsum = float(d.sum())
    for ms, mu in zip(predictions_s, predictions_u):
        ms = np.asarray(ms, dtype=np.float64)
        mu = np.asarray(mu, dtype=np.float64)
        if ms.shape != (n,):
            raise CalibrationError("sample prediction column length mismatch")
        mbar = float((d * ms).sum()) / dsum
        cols.append(ms - mbar)
        targets.append(float(mu.sum()) - n_population * mbar)
    if aux_s is not None:
        aux_s = np.atleast_2d(np.asarray(aux_s, dtype=np.float64))
        if aux_s.shape[0] != n:
            aux_s = aux_s.T
        if aux_s.shape[0] != n:
            raise CalibrationError("auxiliary column length mismatch")
        t_v = np.atleast_1d(np.asarray(aux_totals, dtype=np.float64))
        if t_v.shape[0] != aux_s.shape[1]:
            raise CalibrationError("one total per auxiliary column required")
        for j in range(aux_s.shape[1]):
            cols.append(aux_s[:, j])
            targets.append(float(t_v[j]))
    return np.column_stack(cols), np.asarray(targets)


def _independent_columns(h, d):
    """Indices of the earliest maximal independent column set (greedy
    Gram-Schmidt on the sqrt(d)-scaled matrix, so duplicates and
    constant-zero columns are dropped in favor of earlier columns)."""
    scaled = np.sqrt(d)[:, None] * h
    tol = max(h.shape) * np.finfo(float).eps
    kept: list[int] = []
    basis = np.zeros((h.shape[0], 0))
    for j in range(h.shape[1]):
        v = scaled[:, j]
        r = v - basis @ (basis.T @ v)
        r = r - basis @ (basis.T @ r)
        norm_r = float(np.linalg.norm(r))
        norm_v = float(np.linalg.norm(v))
        if norm_v > 0.0 and norm_r > tol * norm_v:
            kept.append(j)
            basis = np.column_stack([basis, r / norm_r])
    return np.asarray(kept, dtype=np.intp)


def _solve_chi_square(d, h, targets):
    m = h.T @ (d[:, None] * h)
    rhs = targets - h.T @ d
    try:
        lam = cho_solve(cho_factor(m), rhs)
    except LinAlgError:
        raise CalibrationError("infeasible or collinear constraints") from None
    return d * (1.0 + h @ lam), lam, 1


def _solve_raking(d, h, targets, tol, max_iter):
    lam = np.zeros(h.shape[1])
    scale = 1.0 + np.abs(targets)
    it = 0
    while it < max_iter:
        it += 1
        w = d * np.exp(h @ lam)
        f = h.T @ w - targets
        if np.max(np.abs(f) / scale) <= tol:
            return w, lam, it
        jac = h.T @ (w[:, None] * h)
        try:
            step = cho_solve(cho_factor(jac), f)
        except LinAlgError:
            raise CalibrationError("infeasible or collinear constraints",
                                   residuals=f) from None
        lam = lam - step
        if np.max(np.abs(step)) <= 1e-10:
            break
    w = d * np.exp(h @ lam)
    f = h.T @ w - targets
    if np.max(np.abs(f) / scale) <= tol:
        return w, lam, it
    raise CalibrationError(
        f"raking did not converge in {it} iterations", residuals=f)


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    """Solve for calibrated weights w = d * F(lam' h).

    Chi-square distance (F(u) = 1 + u) is a single linear solve; raking
    (F(u) = exp(u)) runs Newton iterations.  Exactly collinear columns
    are dropped (with a warning) before solving; all original
    constraints are still checked on exit.  An optional cap fixes
    over-the-cap weights at the cap and re-solves on the free units.
    """
    d, h, targets = problem.d, problem.h, problem.targets
    keep = _independent_columns(h, d)
    dropped = tuple(sorted(set(range(h.shape[1])) - set(int(k) for k in keep)))
    if dropped:
        warnings.warn(f"dropping collinear calibration columns {dropped}",
                      stacklevel=2)
    if keep.size == 0:
        raise CalibrationError("no usable constraint columns")
    hk = h[:, keep]
    tk = targets[keep]

    def solve(dd, hh, tt):
        if problem.distance == "chi_square":
            return _solve_chi_square(dd, hh, tt)
        return _solve_raking(dd, hh, tt, problem.tol, problem.max_iter)

    w, lam_k, iters = solve(d, hk, tk)
    capped: tuple[int, ...] = ()
    cap = problem.weight_cap
    if cap is not None:
        fixed = np.zeros(d.size, dtype=bool)
        for _ in range(problem.max_iter):
            over = w > cap
            if not (over & ~fixed).any():
                break
            fixed |= over
            if fixed.all():
                raise CalibrationError("weight cap leaves no free units")
            free = ~fixed
            t_free = tk - cap * hk[fixed].sum(axis=0)
            w_free, lam_k, it2 = solve(d[free], hk[free], t_free)
            iters += it2
            w = np.where(fixed, cap, 0.0)
            w[free] = w_free
        capped = tuple(np.nonzero(fixed)[0].tolist())
        if capped:
            warnings.warn(f"{len(capped)} weights held at the cap", stacklevel=2)

    residuals = h.T @ w - targets
    scale = 1.0 + np.abs(targets)
    bad = np.abs(residuals) / scale > problem.tol
    if bad.any():
        raise CalibrationError(
            "infeasible or collinear constraints (inconsistent targets on "
            f"columns {tuple(np.nonzero(bad)[0].tolist())})", residuals=residuals)
    lam = np.zeros(h.shape[1])
    lam[keep] = lam_k
    return CalibrationResult(weights=w, lam=lam, iterations=iters,
                             residuals=residuals, dropped_columns=dropped,
                             capped_units=capped)


def mc_total(weights, y_s) -> float:
    """Apply one calibrated weight system to any survey variable."""
    weights = np.asarray(weights, dtype=np.float64)
    y_s = np.asarray(y_s, dtype=np.float64)
    if weights.shape != y_s.shape:
        raise CalibrationError("weights and responses length mismatch")
    return float(weights @ y_s)


def write_problem(path, problem: CalibrationProblem, unit_ids=None):
    """Delimited dump of a problem: header comments carry targets and
    options; one row per unit with (id, d, h columns)."""
    n, m = problem.h.shape
    ids = np.arange(1, n + 1) if unit_ids is None else np.asarray(unit_ids)
    with open(path, "w", newline="") as fh:
        fh.write(f"# distance={problem.distance} tol={problem.tol!r} "
                 f"max_iter={problem.max_iter} "
                 f"weight_cap={problem.weight_cap!r}\n")
        fh.write("# targets=" + ",".join(repr(float(t)) for t in problem.targets) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "d"] + [f"h{j}" for j in range(m)])
        for i in range(n):
            writer.writerow([ids[i], repr(float(problem.d[i]))]
                            + [repr(float(v)) for v in problem.h[i]])


def read_problem(path):
    """Inverse of write_problem; returns (problem, unit_ids)."""
    meta = {}
    targets = None
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("targets="):
                    targets = [float(v) for v in body[len("targets="):].split(",")]
                else:
                    for part in body.split():
                        k, _, v = part.partition("=")
                        meta[k] = v
                continue
            rows.append(line)
    if targets is None or not rows:
        raise CalibrationError(f"{path}: missing targets or data")
    parsed = list(csv.reader(rows))
    header, data = parsed[0], parsed[1:]
    ids = np.asarray([r[0] for r in data])
    d = np.asarray([float(r[1]) for r in data])
    h = np.asarray([[float(v) for v in r[2:]] for r in data])
    cap = meta.get("weight_cap", "None")
    problem = CalibrationProblem(
        d, h, np.asarray(targets), distance=meta.get("distance", "chi_square"),
        max_iter=int(meta.get("max_iter", 50)), tol=float(meta.get("tol", 1e-8)),
        weight_cap=None if cap == "None" else float(cap))
    return problem, ids


def write_weights(path, unit_ids, weights):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "weight"])
        for uid, w in zip(unit_ids, weights):
            writer.writerow([uid, repr(float(w))])


def read_weights(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["unit_id", "weight"]:
            raise CalibrationError(f"{path}: not a weight file")
        rows = [r for r in reader if r and not r[0].startswith("#")]
    ids = np.asarray([r[0] for r in rows])
    w = np.asarray([float(r[1]) for r in rows])
    return ids, w
