"""Forests of randomized trees exposing predictions as donor weights.

Each of the B trees is grown on a per-tree resample (none / bootstrap /
subsample without replacement) with ``mtry`` candidate columns redrawn
before every split.  A fitted value is always a convex combination of
member responses: plain node means under population scope, Hajek
(inverse-probability-weighted) node means under sample scope.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_seed, rng_from
from .cart import RegressionTree, grow_tree


class ForestError(Exception):
    pass


@dataclass(frozen=True)
class ResampleMode:
    """Per-tree resampling: "none", "bootstrap", or "subsample" with a
    fraction in (0, 1] (ceil(f*n) distinct units, uniform over subsets)."""

    kind: str
    fraction: float | None = None

    def __post_init__(self):
        if self.kind not in ("none", "bootstrap", "subsample"):
            raise ForestError(f"unknown resample kind {self.kind!r}")
        if self.kind == "subsample":
            f = self.fraction
            if f is None or not 0.0 < f <= 1.0:
                raise ForestError("subsample fraction must be in (0, 1]")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def bootstrap(cls):
        return cls("bootstrap")

    @classmethod
    def subsample(cls, fraction=0.63):
        return cls("subsample", float(fraction))


@dataclass(frozen=True)
class ForestParams:
    """Hyper-parameters; the defaults are the library-wide defaults
    (B=1000 trees, mtry=floor(sqrt(p)), nodes of at least 5 units,
    0.63 subsampling)."""

    n_trees: int = 1000
    mtry: int | None = None
    min_node_size: int = 5
    resample: ResampleMode = field(default_factory=lambda: ResampleMode.subsample(0.63))
    master_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ForestError("need at least one tree")
        if self.min_node_size < 1:
            raise ForestError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ForestError("mtry must be >= 1")

    def resolve_mtry(self, n_predictors: int) -> int:
        if self.mtry is not None:
            return min(self.mtry, n_predictors)
        return max(1, int(np.sqrt(n_predictors)))


def draw_membership(mode: ResampleMode, n_units: int, rng: np.random.Generator):
    """Multiplicity vector of one resample (psi = counts > 0).

    "none": all ones.  "subsample": exactly ceil(f*n) ones.  "bootstrap":
    multinomial counts from n draws with replacement.
    """
    if n_units < 1:
        raise ForestError("n_units must be >= 1")
    if mode.kind == "none":
        return np.ones(n_units, dtype=np.int64)
    if mode.kind == "subsample":
        k = int(np.ceil(mode.fraction * n_units))
        counts = np.zeros(n_units, dtype=np.int64)
        counts[rng.choice(n_units, size=k, replace=False)] = 1
        return counts
    draws = rng.integers(0, n_units, size=n_units)
    return np.bincount(draws, minlength=n_units).astype(np.int64)


class ForestModel:
    """A fitted forest.

    ``scope`` is "population" (plain node means) or "sample" (Hajek node
    means using the attached design weights d = 1/pi).  ``counts[b]`` is
    the b-th resample's multiplicity vector over the training rows, and
    ``leaf_value[b]`` maps node ids to the fitted value of each terminal.
    """

    __slots__ = ("params", "scope", "n_train", "n_predictors", "design_weights",
                 "trees", "counts", "leaf_value", "leaf_den")

    def __init__(self, params, scope, n_train, n_predictors, design_weights,
                 trees, counts, leaf_value, leaf_den):
        self.params = params
        self.scope = scope
        self.n_train = n_train
        self.n_predictors = n_predictors
        self.design_weights = design_weights
        self.trees: list[RegressionTree] = trees
        self.counts: list[np.ndarray] = counts
        self.leaf_value: list[np.ndarray] = leaf_value
        self.leaf_den: list[np.ndarray] = leaf_den

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        acc = np.zeros(X.shape[0])
        for tree, values in zip(self.trees, self.leaf_value):
            acc += values[tree.route(X)]
        return acc / self.n_trees


def _tree_leaf_stats(tree, counts, y, d):
    """Fitted value and weight denominator per terminal node."""
    nn = tree.n_nodes
    rows = np.nonzero(counts > 0)[0]
    leaves = tree.member_leaf[rows]
    c = counts[rows].astype(np.float64)
    if d is None:
        den = np.bincount(leaves, weights=c, minlength=nn)
        value = tree.mean.copy()
    else:
        cd = c * d[rows]
        den = np.bincount(leaves, weights=cd, minlength=nn)
        num = np.bincount(leaves, weights=cd * y[rows], minlength=nn)
        is_leaf = tree.feature < 0
        if not (den[is_leaf] > 0).all():
            raise AssertionError("terminal node with zero estimated size")
        value = np.full(nn, np.nan)
        value[is_leaf] = num[is_leaf] / den[is_leaf]
    return value, den


def fit_forest(X, y, params: ForestParams, *, design_weights=None, n_jobs=1):
    """Fit B (membership, tree) pairs; deterministic given master_seed.

    ``design_weights`` (d = 1/pi per training row) switches the model to
    sample scope: leaf values become Hajek means.  Trees can be grown in
    parallel; per-tree seeds depend only on (master_seed, b), so the
    result is independent of scheduling.
    """
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if y.shape != (n,):
        raise ForestError("y length does not match X")
    d = None
    if design_weights is not None:
        d = np.asarray(design_weights, dtype=np.float64)
        if d.shape != (n,) or (d <= 0).any():
            raise ForestError("design weights must be positive, one per row")
    mtry = params.resolve_mtry(p)

    def build(b):
        counts = draw_membership(params.resample, n, rng_from(params.master_seed, b, 0))
        tree = grow_tree(X, y, counts,
                         min_node_size=params.min_node_size, mtry=mtry,
                         seed=derive_seed(params.master_seed, b, 1))
        value, den = _tree_leaf_stats(tree, counts, y, d)
        return tree, counts, value, den

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            built = list(pool.map(build, range(params.n_trees)))
    else:
        built = [build(b) for b in range(params.n_trees)]

    trees, counts, values, dens = map(list, zip(*built))
    return ForestModel(params, "sample" if d is not None else "population",
                       n, p, d, trees, counts, values, dens)


def forest_predict(model: ForestModel, X) -> np.ndarray:
    """Forest fit at each row of X: the across-tree average of terminal
    (Hajek-)means, identical to the donor-weighted sum of responses."""
    return model.predict(X)


@dataclass(frozen=True, eq=False)
class PredictionWeightVector:
    """Donor weights realizing one fitted value as sum(w * y[donors])."""

    donor_ids: np.ndarray
    weights: np.ndarray

    @property
    def total(self) -> float:
        return float(self.weights.sum())


def forest_weights(model: ForestModel, x) -> PredictionWeightVector:
    """Donor weights at one point.

    Weights are positive exactly for units sharing a terminal with x in
    at least one tree, and sum to one in both scopes (per tree they are
    multiplicity * [d] / denominator over the terminal's members).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    w = np.zeros(model.n_train)
    d = model.design_weights
    for tree, counts, den in zip(model.trees, model.counts, model.leaf_den):
        leaf = int(tree.route(x)[0])
        rows = np.nonzero((counts > 0) & (tree.member_leaf == leaf))[0]
        num = counts[rows].astype(np.float64)
        if d is not None:
            num = num * d[rows]
        w[rows] += num / den[leaf]
    w /= model.n_trees
    donors = np.nonzero(w > 0)[0]
    return PredictionWeightVector(donors, w[donors])


def serialize_forest(model: ForestModel) -> str:
    """Line-oriented text dump for inspection: one node per line with
    ``tree id parent var threshold count mean`` (var -1 marks terminals)."""
    out = [f"# rfsurvey-forest v1 trees={model.n_trees} scope={model.scope}"]
    for b, tree in enumerate(model.trees):
        parent = np.full(tree.n_nodes, -1, dtype=np.int64)
        for v in range(tree.n_nodes):
            if tree.feature[v] >= 0:
                parent[tree.left[v]] = v
                parent[tree.right[v]] = v
        out.append(f"# tree {b} nodes={tree.n_nodes} seed={tree.seed}")
        for v in range(tree.n_nodes):
            out.append("%d %d %d %d %.17g %.17g %.17g"
                       % (b, v, parent[v], tree.feature[v], tree.threshold[v],
                          tree.count[v], tree.mean[v]))
    return "\n".join(out) + "\n"


def parse_forest_text(text: str):
    """Parse the serialize_forest format back into per-tree node tables
    (dicts of arrays), for tooling and round-trip tests."""
    trees: dict[int, dict[str, list]] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        b, v, parent, var, thr, cnt, mean = line.split()
        rec = trees.setdefault(int(b), {"id": [], "parent": [], "var": [],
                                        "threshold": [], "count": [], "mean": []})
        rec["id"].append(int(v))
        rec["parent"].append(int(parent))
        rec["var"].append(int(var))
        rec["threshold"].append(float(thr))
        rec["count"].append(float(cnt))
        rec["mean"].append(float(mean))
    return [
        {k: np.asarray(vals) for k, vals in trees[b].items()}
        for b in sorted(trees)
    ]
