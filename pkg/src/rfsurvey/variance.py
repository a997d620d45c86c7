"""Design-based variance estimation and normal confidence intervals.

The general estimator is the double sum over sample pairs
(pi_kl - pi_k pi_l) / pi_kl * (e_k / pi_k) * (e_l / pi_l) applied to the
working-model residuals; for SRSWOR and stratified SRSWOR the closed
forms N_h^2 (1 - f_h) s_h^2 / n_h are used instead (they coincide with
the double sum whenever every stratum contributes two sampled units).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .design import DesignSpec


class VarianceError(Exception):
    pass


@dataclass(frozen=True, eq=False)
class ResidualSet:
    """Sample residuals bundled with the design information needed to
    estimate the variance of a model-assisted total."""

    residuals: np.ndarray
    design: DesignSpec
    members: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.residuals, dtype=np.float64)
        m = np.asarray(self.members, dtype=np.int64)
        if e.shape != m.shape:
            raise VarianceError("residuals and members length mismatch")
        if not np.isfinite(e).all():
            raise VarianceError("residuals must be finite")
        object.__setattr__(self, "residuals", e)
        object.__setattr__(self, "members", m)


def _var_total_srswor_closed(e, N, n):
    if n < 2:
        return None
    f = n / N
    s2 = float(np.var(e, ddof=1))
    return N * N * (1.0 - f) * s2 / n


def _var_total_closed(e, design, members):
    if design.kind == "srswor":
        return _var_total_srswor_closed(e, design.n_population, design.n_sample)
    h = design.strata[members]
    total = 0.0
    for code in range(design.n_h.size):
        eh = e[h == code]
        nh = int(design.n_h[code])
        if eh.size != nh:
            raise VarianceError("sample does not match the design's allocation")
        part = _var_total_srswor_closed(eh, int(design._N_h[code]), nh)
        if part is None:
            return None
        total += part
    return total


def _var_total_double_sum(e, design, members):
    pi = design.pi[members]
    pjm = design.pi_joint_matrix(members)
    if (pjm <= 0).any():
        raise VarianceError("variance not estimable: a joint inclusion "
                            "probability of a sample pair is zero")
    u = e / pi
    coef = (pjm - pi[:, None] * pi[None, :]) / pjm
    return float(u @ coef @ u)


def var_ma(residuals, design: DesignSpec, members, *, method="auto") -> float:
    """Variance estimate of (total estimate) / N from sample residuals.

    ``method`` "auto" picks the closed form when the design allows it,
    "closed" forces it, "double_sum" forces the O(n^2) general path.
    """
    return var_ma_total(residuals, design, members, method=method) / design.n_population**2


def var_ma_total(residuals, design: DesignSpec, members, *, method="auto") -> float:
    """Variance estimate of the total estimate itself (N^2 scaling)."""
    rs = ResidualSet(residuals, design, members)
    e, members = rs.residuals, rs.members
    if method not in ("auto", "closed", "double_sum"):
        raise VarianceError(f"unknown method {method!r}")
    if method in ("auto", "closed"):
        v = _var_total_closed(e, design, members)
        if v is not None:
            return v
        if method == "closed":
            raise VarianceError("variance not estimable in closed form "
                                "(a stratum has a single sampled unit)")
    return _var_total_double_sum(e, design, members)


def design_variance_total(values_pop, design: DesignSpec) -> float:
    """Exact design variance of the expanded total of fixed population
    values (census-only oracle for tests and diagnostics)."""
    v = np.asarray(values_pop, dtype=np.float64)
    N = design.n_population
    if v.shape != (N,):
        raise VarianceError("need one value per population unit")
    if design.kind == "srswor":
        n = design.n_sample
        if n == N:
            return 0.0
        s2 = float(np.var(v, ddof=1))
        return N * N * (1.0 - n / N) * s2 / n
    total = 0.0
    for code in range(design.n_h.size):
        vh = v[design.strata == code]
        Nh = vh.size
        nh = int(design.n_h[code])
        if nh < Nh:
            total += Nh * Nh * (1.0 - nh / Nh) * float(np.var(vh, ddof=1)) / nh
    return total


def confidence_interval(point, variance, level=0.95):
    """Normal-theory interval point +/- z * sqrt(variance)."""
    if variance < 0:
        raise VarianceError("negative variance")
    if not 0.0 < level < 1.0:
        raise VarianceError("level must be in (0, 1)")
    z = float(norm.ppf(0.5 + level / 2.0))
    half = z * float(np.sqrt(variance))
    return point - half, point + half
