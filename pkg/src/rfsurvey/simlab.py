"""Synthetic populations and the Monte Carlo laboratory.

Eight benchmark response models over a fixed predictor recipe (seven
X-variables plus one hundred noise V-columns), repeated-sampling
experiments comparing estimators by relative bias / efficiency /
coverage, and the sample-vs-population partition convergence diagnostic.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_seed, rng_from
from .cart import TreeError
from .design import DesignSpec, make_design
from .estimators import (EstimatorError, greg_fits, ht_total, ma_total,
                         pgd_total, rf_total_population, rf_total_sample)
from .forest import ForestError, ForestParams, ResampleMode, fit_forest
from .population import PopulationFrame
from .variance import VarianceError, confidence_interval, var_ma_total


class SimulationError(Exception):
    pass


#: estimator failures recorded per replicate rather than crashing a run
RECOVERABLE_ERRORS = (EstimatorError, ForestError, TreeError, VarianceError)


#: predictor columns each response's working model is allowed to see
MODEL_PREDICTORS = {
    0: ["X1", "X2", "X3"],
    1: ["X0"],
    2: ["X0"],
    3: [f"X{i}" for i in range(1, 7)],
    4: [f"X{i}" for i in range(1, 7)],
    5: [f"X{i}" for i in range(1, 7)],
    6: [f"V{i}" for i in range(1, 11)],
    7: [f"V{i}" for i in range(1, 51)],
    8: [f"V{i}" for i in range(1, 101)],
}


@dataclass(frozen=True)
class SyntheticModelSpec:
    """One synthetic population: which response model, how many units,
    the generation seed, and how the second argument of N(0, v) is read.

    The default reads it as the standard deviation (the convention the
    benchmark efficiency values require, and R's rnorm argument order);
    set noise_as_variance=True for the variance reading.
    """

    model_id: int
    n_units: int
    seed: int = 0
    noise_as_variance: bool = False

    def __post_init__(self):
        if self.model_id not in MODEL_PREDICTORS:
            raise SimulationError(f"unknown model id {self.model_id}")
        if self.n_units < 1:
            raise SimulationError("n_units must be >= 1")


def _standardize(v):
    """Finite-population standardization: mean 0, variance 1 (1/N)."""
    return (v - v.mean()) / np.sqrt(np.var(v))


def gen_population(spec: SyntheticModelSpec) -> PopulationFrame:
    """Generate the predictor recipe and every response model.

    All responses are produced (they share the predictors), so one frame
    serves any model id; ``spec.model_id`` only selects the default
    study variable name ``y<id>`` used by callers.
    """
    rng = rng_from(spec.seed)
    n = spec.n_units

    x0 = rng.uniform(0.0, 1.0, n)
    x1 = _standardize(rng.normal(0.0, 1.0, n))
    x2 = _standardize(rng.beta(3.0, 1.0, n))
    x3 = _standardize(2.0 * rng.gamma(3.0, 2.0, n))
    x4 = (rng.uniform(0.0, 1.0, n) < 0.7).astype(np.float64)
    u = rng.uniform(0.0, 1.0, n)
    x5 = np.where(u < 0.4, 1.0, np.where(u < 0.7, 2.0, 3.0))
    x6 = _standardize(rng.exponential(1.0, n))
    names = [f"X{i}" for i in range(7)]
    cols = [x0, x1, x2, x3, x4, x5, x6]
    v = rng.uniform(-1.0, 1.0, (n, 100))
    names += [f"V{i}" for i in range(1, 101)]

    def noise(param):
        sd = math.sqrt(param) if spec.noise_as_variance else param
        return rng.normal(0.0, sd, n)

    study = {}
    study["y0"] = 2.0 + 2.0 * x1 + x2 + x3 + noise(1.0)
    study["y1"] = 1.0 + 2.0 * (x0 - 0.5) + noise(0.1)
    study["y2"] = 1.0 + 2.0 * (x0 - 0.5) ** 2 + noise(0.1)
    study["y3"] = 2.0 + x6 + x2 + x3 + x4 + x5 + noise(1.0)
    study["y4"] = 2.0 + (x6 + x2 + x3) ** 2 + noise(1.0)
    study["y5"] = 0.5 * x5 + np.exp(-x1) + 3.0 * x4 + np.exp(-x6) \
        + _standardize(rng.exponential(1.0, n))
    study["y6"] = v[:, 0] ** 2 + np.exp(-v[:, 1] ** 2) + noise(0.3)
    study["y7"] = v[:, 0] ** 2 + np.exp(-v[:, 1] ** 2) + noise(0.3)
    study["y8"] = 3.0 + v[:, 0] * v[:, 1] + v[:, 2] ** 2 - v[:, 3] * v[:, 6] \
        + v[:, 7] * v[:, 9] - v[:, 5] ** 2 + noise(0.5)

    x = np.column_stack(cols + [v])
    return PopulationFrame(x, tuple(names), study)


def working_predictors(model_id: int) -> list[str]:
    return list(MODEL_PREDICTORS[model_id])


# ---------------------------------------------------------------------------
# Monte Carlo harness


@dataclass(frozen=True, eq=False)
class McPopulation:
    """Fixed population for a repeated-sampling study: the working
    predictor matrix, the study values, and a label for reports."""

    x: np.ndarray
    y: np.ndarray
    label: str

    @classmethod
    def from_model(cls, model_id, n_units, seed=0, noise_as_variance=False):
        spec = SyntheticModelSpec(model_id, n_units, seed, noise_as_variance)
        frame = gen_population(spec)
        xw = frame.select_predictors(working_predictors(model_id))
        return cls(np.ascontiguousarray(xw), frame.study(f"y{model_id}"),
                   f"model{model_id}")


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator configuration inside a Monte Carlo run.

    ``kind``: "ht", "greg", "cart" (single deterministic tree), "rf"
    (sample-grown forest), "rf_pop" (population-grown partition, using
    the population response as its proxy), or "pgd" (fixed population
    forest fits; the design-unbiased oracle).
    """

    name: str
    kind: str
    n_trees: int = 200
    min_node_size: int = 5
    mtry: int | None = None
    resample: ResampleMode = field(default_factory=lambda: ResampleMode.subsample(0.63))
    with_variance: bool = False
    pop_min_node: int | None = None

    def __post_init__(self):
        if self.kind not in ("ht", "greg", "cart", "rf", "rf_pop", "pgd"):
            raise SimulationError(f"unknown estimator kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class McConfig:
    population: McPopulation
    sample_size: int
    replicates: int
    estimators: tuple[EstimatorSpec, ...]
    master_seed: int = 0
    ci_level: float = 0.95
    n_jobs: int = 1
    keep_traces: bool = False
    max_failure_rate: float = 0.01
    design: DesignSpec | None = None


@dataclass(frozen=True)
class McRow:
    estimator: str
    rb: float
    re: float
    mse: float
    coverage: float
    ci_length: float
    var_mean: float
    point_var: float
    n_fail: int


@dataclass(frozen=True, eq=False)
class McSummary:
    label: str
    n_units: int
    sample_size: int
    replicates: int
    t_true: float
    rows: tuple[McRow, ...]
    wall_time: float
    master_seed: int
    traces: dict | None = None


def _forest_params(spec: EstimatorSpec, n_predictors: int, seed: int) -> ForestParams:
    if spec.kind == "cart":
        return ForestParams(n_trees=1, mtry=n_predictors,
                            min_node_size=spec.min_node_size,
                            resample=ResampleMode.none(), master_seed=seed)
    return ForestParams(n_trees=spec.n_trees, mtry=spec.mtry,
                        min_node_size=spec.min_node_size,
                        resample=spec.resample, master_seed=seed)


def _pgd_population_fits(spec, x, y, n_sample, seed):
    """Fixed population-forest fits for the difference-estimator oracle.

    The population tree granularity mirrors the sample forest: the
    minimum node size scales by N/n unless given explicitly.
    """
    n = x.shape[0]
    if spec.pop_min_node is not None:
        n0 = spec.pop_min_node
    else:
        n0 = max(1, round(spec.min_node_size * n / n_sample))
    params = ForestParams(n_trees=spec.n_trees, mtry=spec.mtry, min_node_size=n0,
                          resample=spec.resample, master_seed=seed)
    model = fit_forest(x, y, params)
    return model.predict(x)


# worker-process context (set by the pool initializer)
_CTX: dict = {}


def _mc_init(config: McConfig):
    global _CTX
    pop = config.population
    n = pop.x.shape[0]
    design = config.design
    if design is None:
        design = make_design("srswor", n, config.sample_size)
    pgd_fits = {}
    for i, spec in enumerate(config.estimators):
        if spec.kind == "pgd":
            pgd_fits[spec.name] = _pgd_population_fits(
                spec, pop.x, pop.y, config.sample_size,
                derive_seed(config.master_seed, 3, i))
    _CTX = {"config": config, "design": design, "pgd_fits": pgd_fits}


def _estimate_one(spec, spec_index, members, r):
    config: McConfig = _CTX["config"]
    design: DesignSpec = _CTX["design"]
    pop = config.population
    y_s = pop.y[members]
    pi_s = design.pi[members]
    seed = derive_seed(config.master_seed, 2, r, spec_index)
    want_ci = spec.with_variance

    if spec.kind == "ht":
        point = ht_total(y_s, pi_s)
        resid = y_s if want_ci else None
    elif spec.kind == "greg":
        fits = greg_fits(pop.x, members, y_s, pi_s)
        point = ma_total(fits, y_s, pi_s, members)
        resid = (y_s - fits[members]) if want_ci else None
    elif spec.kind == "pgd":
        fits = _CTX["pgd_fits"][spec.name]
        point = pgd_total(fits, y_s, pi_s, members)
        resid = (y_s - fits[members]) if want_ci else None
    elif spec.kind in ("rf", "cart"):
        params = _forest_params(spec, pop.x.shape[1], seed)
        report = rf_total_sample(pop.x, members, y_s, pi_s, params,
                                 design=design if want_ci else None,
                                 ci_level=config.ci_level if want_ci else None)
        return report.point, report.variance, report.ci
    else:  # rf_pop
        # population trees need nodes holding enough sampled units, so
        # the node size scales by N/n unless pinned explicitly
        n_pop = pop.x.shape[0]
        n0 = spec.pop_min_node
        if n0 is None:
            n0 = max(1, round(spec.min_node_size * n_pop / config.sample_size))
        params = ForestParams(n_trees=spec.n_trees, mtry=spec.mtry,
                              min_node_size=n0, resample=spec.resample,
                              master_seed=seed)
        report = rf_total_population(pop.x, pop.y, members, y_s, pi_s, params,
                                     design=design if want_ci else None,
                                     ci_level=config.ci_level if want_ci else None)
        return report.point, report.variance, report.ci

    if resid is None:
        return point, None, None
    variance = var_ma_total(resid, design, members)
    lo, hi = confidence_interval(point, variance, config.ci_level)
    return point, variance, (lo, hi, config.ci_level)


def _mc_run_range(args):
    r_lo, r_hi = args
    config: McConfig = _CTX["config"]
    design: DesignSpec = _CTX["design"]
    names = [s.name for s in config.estimators]
    nr = r_hi - r_lo
    out = {
        name: {"point": np.full(nr, np.nan), "var": np.full(nr, np.nan),
               "lo": np.full(nr, np.nan), "hi": np.full(nr, np.nan),
               "fail": np.zeros(nr, dtype=bool), "error": None}
        for name in names
    }
    ht_ref = np.full(nr, np.nan)
    for k, r in enumerate(range(r_lo, r_hi)):
        sample = design.draw(derive_seed(config.master_seed, 1, r))
        members = sample.members
        y_s = config.population.y[members]
        pi_s = design.pi[members]
        ht_ref[k] = ht_total(y_s, pi_s)
        for i, spec in enumerate(config.estimators):
            rec = out[spec.name]
            try:
                point, variance, ci = _estimate_one(spec, i, members, r)
            except RECOVERABLE_ERRORS as exc:
                rec["fail"][k] = True
                if rec["error"] is None:
                    rec["error"] = str(exc)
                continue
            rec["point"][k] = point
            if variance is not None:
                rec["var"][k] = variance
            if ci is not None:
                rec["lo"][k], rec["hi"][k] = ci[0], ci[1]
    return ht_ref, out


def run_mc(config: McConfig) -> McSummary:
    """Repeated-sampling comparison of the configured estimators.

    Per replicate r, a sample is drawn with a seed derived from
    (master_seed, r) and every estimator is evaluated; results are
    independent of the parallelism degree.  Raises if any estimator
    fails in more than ``max_failure_rate`` of the replicates.
    """
    names = [s.name for s in config.estimators]
    if len(set(names)) != len(names):
        raise SimulationError("estimator names must be unique")
    started = time.perf_counter()
    t_true = float(config.population.y.sum())
    R = config.replicates

    if config.n_jobs > 1:
        n_chunks = min(R, config.n_jobs * 4)
        bounds = np.linspace(0, R, n_chunks + 1).astype(int)
        ranges = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if a < b]
        with ProcessPoolExecutor(max_workers=config.n_jobs,
                                 initializer=_mc_init,
                                 initargs=(config,)) as pool:
            parts = list(pool.map(_mc_run_range, ranges))
    else:
        _mc_init(config)
        parts = [_mc_run_range((0, R))]

    ht_ref = np.concatenate([p[0] for p in parts])
    merged = {
        name: {key: (np.concatenate([p[1][name][key] for p in parts])
                     if key != "error"
                     else next((p[1][name]["error"] for p in parts
                                if p[1][name]["error"]), None))
               for key in ("point", "var", "lo", "hi", "fail", "error")}
        for name in names
    }

    mse_ht = math.fsum((p - t_true) ** 2 for p in ht_ref) / R
    rows = []
    for spec in config.estimators:
        rec = merged[spec.name]
        fails = int(rec["fail"].sum())
        if fails > config.max_failure_rate * R:
            raise SimulationError(
                f"estimator {spec.name!r} failed in {fails}/{R} replicates "
                f"(first error: {rec['error']})")
        ok = ~rec["fail"]
        pts = rec["point"][ok]
        n_ok = pts.size
        rb = 100.0 * math.fsum((p - t_true) / t_true for p in pts) / n_ok
        mse = math.fsum((p - t_true) ** 2 for p in pts) / n_ok
        re = 100.0 * mse / mse_ht if mse_ht > 0 else math.nan
        have_ci = ok & np.isfinite(rec["lo"])
        if have_ci.any():
            covered = ((rec["lo"][have_ci] <= t_true)
                       & (t_true <= rec["hi"][have_ci]))
            coverage = float(covered.mean())
            ci_length = float((rec["hi"][have_ci] - rec["lo"][have_ci]).mean())
        else:
            coverage = math.nan
            ci_length = math.nan
        have_var = ok & np.isfinite(rec["var"])
        var_mean = float(rec["var"][have_var].mean()) if have_var.any() else math.nan
        point_var = float(np.var(pts, ddof=1)) if n_ok > 1 else math.nan
        rows.append(McRow(spec.name, rb, re, mse, coverage, ci_length,
                          var_mean, point_var, fails))

    traces = None
    if config.keep_traces:
        traces = {"ht_reference": ht_ref}
        for name in names:
            traces[name] = {k: merged[name][k] for k in ("point", "var", "lo", "hi", "fail")}
    return McSummary(config.population.label, config.population.x.shape[0],
                     config.sample_size, R, t_true, tuple(rows),
                     time.perf_counter() - started, config.master_seed, traces)


# ---------------------------------------------------------------------------
# Partition-convergence diagnostic


@dataclass(frozen=True)
class H5Config:
    """Gap study between the population-denominator rewrite of the
    sample-grown forest and the population-grown forest, over a grid of
    population sizes at a fixed sampling fraction.

    Terminal-node sizes must grow with the sample for the gap to shrink;
    by default n0 = max(2, node_size_fraction * n) per grid point, and
    the population forest scales it by N/n so both partitions keep the
    same granularity.  Every replicate redraws the population, both
    forests and the sample, so replicate gaps are i.i.d. and the quoted
    standard error covers all noise sources.
    """

    model_id: int = 0
    n_grid: tuple[int, ...] = (1000, 4000, 16000)
    sampling_fraction: float = 0.1
    replicates: int = 20
    n_probes: int = 120
    n_trees: int = 60
    min_node_size: int | None = None
    node_size_fraction: float = 0.1
    subsample_fraction: float = 0.63
    mtry: int | None = None
    pop_min_node: int | None = None
    master_seed: int = 0


def _extended_membership(counts, members, n_pop, n_prime, rng):
    """Resample membership over the whole population: the sample keeps
    the tree's own membership, and exactly (N' - n') additional member
    units are drawn from outside the sample."""
    psi = np.zeros(n_pop, dtype=bool)
    psi[members[counts > 0]] = True
    extra = n_prime - int(counts.sum())
    if extra > 0:
        outside = np.setdiff1d(np.arange(n_pop), members, assume_unique=False)
        psi[rng.choice(outside, size=min(extra, outside.size), replace=False)] = True
    return psi


def h5_diagnostic(config: H5Config):
    """Mean-squared gap series; one row per population size.

    Per replicate: draw a population, fit the population forest, draw a
    sample and fit the sample forest, extend each sample tree's
    membership to the population, and average the squared difference of
    the two fits over probe points (the first ``n_probes`` population
    rows).  Rows carry the Monte Carlo mean and its standard error.
    """
    rows = []
    f = config.sampling_fraction
    seed = config.master_seed
    mode = ResampleMode.subsample(config.subsample_fraction)
    for i, n_pop in enumerate(config.n_grid):
        n = max(2, int(round(f * n_pop)))
        design = make_design("srswor", n_pop, n)
        n0 = config.min_node_size
        if n0 is None:
            n0 = max(2, int(config.node_size_fraction * n))
        n0_pop = config.pop_min_node
        if n0_pop is None:
            n0_pop = max(2, round(n0 * n_pop / n))
        n_prime = int(np.ceil(config.subsample_fraction * n_pop))
        n_probes = min(config.n_probes, n_pop)
        gaps = np.empty(config.replicates)
        for r in range(config.replicates):
            pop = McPopulation.from_model(config.model_id, n_pop,
                                          seed=derive_seed(seed, 4, i, r))
            x_probe = np.ascontiguousarray(pop.x[:n_probes])
            pop_params = ForestParams(n_trees=config.n_trees, mtry=config.mtry,
                                      min_node_size=n0_pop, resample=mode,
                                      master_seed=derive_seed(seed, 5, i, r))
            m_tilde = fit_forest(pop.x, pop.y, pop_params).predict(x_probe)

            sample = design.draw(derive_seed(seed, 7, i, r))
            members = sample.members
            params = ForestParams(n_trees=config.n_trees, mtry=config.mtry,
                                  min_node_size=n0, resample=mode,
                                  master_seed=derive_seed(seed, 8, i, r))
            model = fit_forest(pop.x[members], pop.y[members], params)
            ext_rng = rng_from(seed, 9, i, r)
            acc = np.zeros(n_probes)
            for tree, counts in zip(model.trees, model.counts):
                psi = _extended_membership(counts, members, n_pop, n_prime, ext_rng)
                leaf_probe = tree.route(x_probe)
                leaf_ext = tree.route(np.ascontiguousarray(pop.x[psi]))
                nn = tree.n_nodes
                den = np.bincount(leaf_ext, minlength=nn).astype(np.float64)
                num = np.bincount(leaf_ext, weights=pop.y[psi], minlength=nn)
                ok = den > 0
                value = np.zeros(nn)
                value[ok] = num[ok] / den[ok]
                acc += value[leaf_probe]
            m_hat_tilde = acc / model.n_trees
            gaps[r] = float(np.mean((m_hat_tilde - m_tilde) ** 2))
        rows.append({
            "n_population": n_pop,
            "n_sample": n,
            "gap": float(gaps.mean()),
            "gap_se": float(gaps.std(ddof=1) / np.sqrt(config.replicates)),
            "replicates": config.replicates,
            "n_probes": int(n_probes),
        })
    return rows
