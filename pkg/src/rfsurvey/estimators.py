"""Point estimators of a finite-population total.

All model-assisted estimators share one shape: population sum of fitted
values plus an inverse-probability-weighted residual correction over the
sample.  Every estimator that admits one also exposes its case-weight
representation (point = sum of weight * y over the sample).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .forest import ForestModel, ForestParams, fit_forest
from .variance import confidence_interval, var_ma_total


class EstimatorError(Exception):
    pass


@dataclass(frozen=True, eq=False)
class EstimateReport:
    """One estimate: point value, optional variance/CI, optional case
    weights reproducing the point as sum(case_weights * y_sample)."""

    point: float
    method: str
    variance: float | None = None
    ci: tuple[float, float, float] | None = None
    case_weights: np.ndarray | None = None

    @property
    def weight_sum(self) -> float | None:
        if self.case_weights is None:
            return None
        return float(self.case_weights.sum())


def ht_total(y_s, pi_s) -> float:
    """Inverse-probability-expanded sample sum (design-unbiased baseline)."""
    y_s = np.asarray(y_s, dtype=np.float64)
    pi_s = np.asarray(pi_s, dtype=np.float64)
    if y_s.shape != pi_s.shape:
        raise EstimatorError("y and pi length mismatch")
    if (pi_s <= 0).any():
        raise EstimatorError("inclusion probabilities must be positive")
    return float((y_s / pi_s).sum())


def _weighted_cross_solve(xs, d, rhs):
    """Solve (xs' diag(d) xs) beta = rhs with a one-shot ridge fallback."""
    m = (xs * d[:, None]).T @ xs
    try:
        return cho_solve(cho_factor(m), rhs)
    except LinAlgError:
        eps = 1e-8 * np.trace(m) / m.shape[0]
        try:
            return cho_solve(cho_factor(m + eps * np.eye(m.shape[0])), rhs)
        except LinAlgError:
            raise EstimatorError("rank-deficient working-model cross-product") from None


def greg_total(x_pop, sample_members, y_s, pi_s, *, add_intercept=True) -> EstimateReport:
    """Survey-weighted linear working model (generalized regression).

    Returns the estimate together with its calibrated case weights
    w_k = d_k * (1 + (t_x - HT(x))' T^-1 x_k), which reproduce known
    predictor totals exactly.
    """
    x_pop = np.atleast_2d(np.asarray(x_pop, dtype=np.float64))
    if x_pop.ndim == 1:
        x_pop = x_pop[:, None]
    members = np.asarray(sample_members, dtype=np.int64)
    y_s = np.asarray(y_s, dtype=np.float64)
    d = 1.0 / np.asarray(pi_s, dtype=np.float64)
    if add_intercept:
        x_pop = np.column_stack([np.ones(x_pop.shape[0]), x_pop])
    xs = x_pop[members]
    t_x = x_pop.sum(axis=0)
    ht_x = xs.T @ d
    g = 1.0 + xs @ _weighted_cross_solve(xs, d, t_x - ht_x)
    w = d * g
    return EstimateReport(point=float(w @ y_s), method="greg", case_weights=w)


def greg_fits(x_pop, sample_members, y_s, pi_s, *, add_intercept=True) -> np.ndarray:
    """Population-level fitted values x_k' beta of the survey-weighted
    linear working model (for residual-based variance estimation)."""
    x_pop = np.atleast_2d(np.asarray(x_pop, dtype=np.float64))
    if x_pop.ndim == 1:
        x_pop = x_pop[:, None]
    members = np.asarray(sample_members, dtype=np.int64)
    y_s = np.asarray(y_s, dtype=np.float64)
    d = 1.0 / np.asarray(pi_s, dtype=np.float64)
    if add_intercept:
        x_pop = np.column_stack([np.ones(x_pop.shape[0]), x_pop])
    xs = x_pop[members]
    beta = _weighted_cross_solve(xs, d, xs.T @ (d * y_s))
    return x_pop @ beta


def pgd_total(m_tilde_pop, y_s, pi_s, sample_members) -> float:
    """Generalized difference estimator around fixed population fits.

    Oracle only: the fits must not depend on which sample was drawn
    (they typically require census responses), which is what makes this
    estimator exactly design-unbiased.
    """
    m = np.asarray(m_tilde_pop, dtype=np.float64)
    members = np.asarray(sample_members, dtype=np.int64)
    y_s = np.asarray(y_s, dtype=np.float64)
    pi_s = np.asarray(pi_s, dtype=np.float64)
    return float(m.sum() + ((y_s - m[members]) / pi_s).sum())


def ma_total(m_hat_pop, y_s, pi_s, sample_members) -> float:
    """Generic model-assisted estimator: population sum of fits plus the
    expanded sample residual correction."""
    m = np.asarray(m_hat_pop, dtype=np.float64)
    members = np.asarray(sample_members, dtype=np.int64)
    y_s = np.asarray(y_s, dtype=np.float64)
    pi_s = np.asarray(pi_s, dtype=np.float64)
    return float(m.sum() + ((y_s - m[members]) / pi_s).sum())


def _forest_scan(model: ForestModel, x_pop, sample_members, d):
    """One pass over the forest: population fits plus the per-unit
    correction factors needed for case weights.

    For each tree, every population row is routed once; per terminal we
    tally the population head count C and the expanded sample count D,
    so the case-weight correction sum over the population collapses to
    (C - D) / denominator at the member's own terminal.
    """
    x_pop = np.ascontiguousarray(np.asarray(x_pop, dtype=np.float64))
    n_pop = x_pop.shape[0]
    n_train = model.n_train
    mhat = np.zeros(n_pop)
    corr = np.zeros(n_train)
    for tree, counts, value, den in zip(model.trees, model.counts,
                                        model.leaf_value, model.leaf_den):
        nn = tree.n_nodes
        leaf_u = tree.route(x_pop)
        mhat += value[leaf_u]
        c_pop = np.bincount(leaf_u, minlength=nn).astype(np.float64)
        d_smp = np.bincount(leaf_u[sample_members], weights=d, minlength=nn)
        ratio = np.zeros(nn)
        ok = den > 0
        ratio[ok] = (c_pop[ok] - d_smp[ok]) / den[ok]
        rows = np.nonzero(counts > 0)[0]
        corr[rows] += counts[rows] * ratio[tree.member_leaf[rows]]
    b = model.n_trees
    return mhat / b, corr / b


def rf_total_sample(x_pop, sample_members, y_s, pi_s, params: ForestParams, *,
                    design=None, ci_level=None, n_jobs=1):
    """Forest-assisted estimator with trees grown on the sample.

    Fits a sample-scope forest (Hajek terminal means), evaluates it over
    the whole population, and returns the model-assisted estimate with
    its case weights, whose sum is exactly the population size.
    """
    x_pop = np.ascontiguousarray(np.atleast_2d(np.asarray(x_pop, dtype=np.float64)))
    members = np.asarray(sample_members, dtype=np.int64)
    y_s = np.asarray(y_s, dtype=np.float64)
    pi_s = np.asarray(pi_s, dtype=np.float64)
    d = 1.0 / pi_s
    model = fit_forest(x_pop[members], y_s, params, design_weights=d, n_jobs=n_jobs)
    mhat, corr = _forest_scan(model, x_pop, members, d)
    point = ma_total(mhat, y_s, pi_s, members)
    w = d * (1.0 + corr)
    variance = ci = None
    if design is not None:
        variance = var_ma_total(y_s - mhat[members], design, members)
        if ci_level is not None:
            ci = (*confidence_interval(point, variance, ci_level), ci_level)
    return EstimateReport(point=point, method="rf-sample", variance=variance,
                          ci=ci, case_weights=w)


def rf_total_population(x_pop, y_star_pop, sample_members, y_s, pi_s,
                        params: ForestParams, *, design=None, ci_level=None,
                        n_jobs=1):
    """Forest-assisted estimator with trees grown on the population.

    The partition is built from a proxy response available for every
    unit, so the case weights never touch the study variable: one weight
    system serves any response observed on the sample.  Terminal fits
    are expanded sample sums over known terminal head counts.
    """
    x_pop = np.ascontiguousarray(np.atleast_2d(np.asarray(x_pop, dtype=np.float64)))
    members = np.asarray(sample_members, dtype=np.int64)
    y_s = np.asarray(y_s, dtype=np.float64)
    pi_s = np.asarray(pi_s, dtype=np.float64)
    d = 1.0 / pi_s
    y_star = np.asarray(y_star_pop, dtype=np.float64)
    model = fit_forest(x_pop, y_star, params, n_jobs=n_jobs)

    n_pop = x_pop.shape[0]
    mhat = np.zeros(n_pop)
    corr = np.zeros(n_pop)
    for tree, counts, den in zip(model.trees, model.counts, model.leaf_den):
        nn = tree.n_nodes
        leaf_u = tree.route(x_pop)
        c_mem = counts[members].astype(np.float64)
        sht = np.bincount(leaf_u[members], weights=c_mem * d * y_s, minlength=nn)
        value = np.zeros(nn)
        ok = den > 0
        value[ok] = sht[ok] / den[ok]
        mhat += value[leaf_u]
        c_pop = np.bincount(leaf_u, minlength=nn).astype(np.float64)
        d_smp = np.bincount(leaf_u[members], weights=d, minlength=nn)
        ratio = np.zeros(nn)
        ratio[ok] = (c_pop[ok] - d_smp[ok]) / den[ok]
        corr += counts * ratio[leaf_u]
    b = model.n_trees
    mhat /= b
    point = ma_total(mhat, y_s, pi_s, members)
    w = d * (1.0 + corr[members] / b)
    variance = ci = None
    if design is not None:
        variance = var_ma_total(y_s - mhat[members], design, members)
        if ci_level is not None:
            ci = (*confidence_interval(point, variance, ci_level), ci_level)
    return EstimateReport(point=point, method="rf-population", variance=variance,
                          ci=ci, case_weights=w)


def oob_decomposition(model: ForestModel, x_pop, sample_members, y_s, pi_s):
    """Split the sample-forest estimate into projection + holdout terms.

    ``projection_term`` is the population sum of forest fits;
    ``correction_term`` re-expresses the expanded residual sum using only
    units left out of each tree's resample (their member terms vanish
    against the Hajek terminal means).  The two add up to the
    forest-assisted estimate.  With multiplicity resampling the factor
    is (1 - multiplicity), which reduces to (1 - membership) whenever
    resampling is without replacement.
    """
    if model.scope != "sample":
        raise EstimatorError("decomposition needs a sample-scope forest")
    x_pop = np.ascontiguousarray(np.atleast_2d(np.asarray(x_pop, dtype=np.float64)))
    members = np.asarray(sample_members, dtype=np.int64)
    y_s = np.asarray(y_s, dtype=np.float64)
    d = 1.0 / np.asarray(pi_s, dtype=np.float64)
    x_s = x_pop[members]
    projection = float(model.predict(x_pop).sum())
    corr = 0.0
    for tree, counts, value in zip(model.trees, model.counts, model.leaf_value):
        pred_s = value[tree.route(x_s)]
        corr += float(((1.0 - counts) * (y_s - pred_s) * d).sum())
    corr /= model.n_trees
    return {"projection_term": projection, "correction_term": corr}


def domain_total(estimate, y_s, domain_s, pi_s):
    """Estimate a domain total and proportion by the y * indicator
    transform; ``estimate`` maps a sample response vector to an
    EstimateReport.  Returns (report, domain proportion)."""
    domain_s = np.asarray(domain_s, dtype=np.float64)
    y_s = np.asarray(y_s, dtype=np.float64)
    size_hat = ht_total(domain_s, pi_s)
    if size_hat <= 0:
        raise EstimatorError("estimated domain size is zero")
    report = estimate(y_s * domain_s)
    return report, report.point / size_hat
