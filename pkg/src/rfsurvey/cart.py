"""Single regression trees grown by variance-reduction splitting.

A split (column j, position z) is scored by the per-node average drop in
sum of squared errors; candidate positions are the midpoints between
consecutive distinct observed values, children must keep at least
``min_node_size`` member weight, and a node with no positive-gain
admissible split becomes terminal.  Routing sends a point left iff
``x[j] < z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import _pykernels


class TreeError(Exception):
    pass


@dataclass(frozen=True)
class SplitRule:
    var_index: int
    threshold: float


class RegressionTree:
    """A fitted tree as flat node arrays (id 0 is the root).

    ``feature[v] == -1`` marks a terminal node; internal nodes carry the
    split column and threshold plus left/right child ids.  ``count`` and
    ``mean`` hold the member weight and (multiplicity-weighted) mean
    response of every node as seen during growth.
    """

    __slots__ = ("feature", "threshold", "left", "right", "count", "mean",
                 "min_node_size", "seed", "member_leaf")

    def __init__(self, arrays, min_node_size, seed):
        self.feature = arrays["feature"]
        self.threshold = arrays["threshold"]
        self.left = arrays["left"]
        self.right = arrays["right"]
        self.count = arrays["count"]
        self.mean = arrays["mean"]
        self.member_leaf = arrays["leaf_of"]
        self.min_node_size = min_node_size
        self.seed = seed

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def leaf_ids(self) -> np.ndarray:
        return np.nonzero(self.feature < 0)[0]

    def split_of(self, node: int) -> SplitRule | None:
        if self.feature[node] < 0:
            return None
        return SplitRule(int(self.feature[node]), float(self.threshold[node]))

    def route(self, X) -> np.ndarray:
        """Terminal node id for each row of X (total on all of R^p)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return _kernels.route(self.feature, self.threshold, self.left,
                              self.right, X)

    def predict(self, X) -> np.ndarray:
        """Plain member-mean prediction of the terminal containing x."""
        return self.mean[self.route(X)]


def split_gain(y, x, threshold) -> float:
    """Average SSE reduction when splitting one node at ``threshold``.

    ``y`` and ``x`` are the node's responses and the candidate column;
    both sides of the split must be nonempty.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.size == 0:
        raise TreeError("empty node")
    go_left = x < threshold
    if not go_left.any() or go_left.all():
        raise TreeError(f"no admissible split at {threshold!r}")
    sse = float(((y - y.mean()) ** 2).sum())
    sse_l = float(((y[go_left] - y[go_left].mean()) ** 2).sum())
    sse_r = float(((y[~go_left] - y[~go_left].mean()) ** 2).sum())
    return (sse - sse_l - sse_r) / y.size


def best_split(y, X, *, min_node_size=1, candidate_vars=None, counts=None):
    """Best (column, midpoint) over the candidate columns, or None.

    Mirrors the growth kernel's selection rule exactly: per column the
    smallest threshold within a 1e-12 relative tie of that column's best
    gain, across columns the lowest index within the same tolerance, and
    None when no admissible split has positive gain.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64)
    m, p = X.shape
    if candidate_vars is None:
        candidate_vars = range(p)
    candidate_vars = sorted(candidate_vars)
    if not candidate_vars:
        raise TreeError("candidate_vars must be nonempty")
    c = np.ones(m) if counts is None else np.asarray(counts, dtype=np.float64)
    idx = np.arange(m)
    cy = c * y
    tc = _pykernels._seqsum(c)
    tcy = _pykernels._seqsum(cy)
    found = _pykernels._best_split_node(X, y, c, cy, idx, tc, tcy,
                                        list(candidate_vars), float(min_node_size))
    if found is None:
        return None
    var, z, _gain = found
    return SplitRule(int(var), float(z))


def grow_tree(X, y, membership=None, *, min_node_size=5, mtry=None, seed=0):
    """Grow a tree on the rows with positive membership.

    ``membership`` may be a 0/1 vector or nonnegative multiplicities
    (bootstrap counts); multiplicities weigh node means and the
    min-node-size accounting.  ``mtry`` columns are redrawn without
    replacement before every split attempt; None means all columns.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if y.shape != (n,):
        raise TreeError("y length does not match X")
    if membership is None:
        membership = np.ones(n)
    c_all = np.asarray(membership, dtype=np.float64)
    rows = np.nonzero(c_all > 0)[0]
    if c_all[rows].sum() < min_node_size:
        raise TreeError("insufficient data: fewer than min_node_size member units")
    if mtry is None:
        mtry = p
    arrays = _kernels.grow(np.ascontiguousarray(X[rows]), y[rows], c_all[rows],
                           float(min_node_size), int(mtry), int(seed))
    member_leaf = np.full(n, -1, dtype=np.int32)
    member_leaf[rows] = arrays["leaf_of"]
    arrays = dict(arrays, leaf_of=member_leaf)
    tree = RegressionTree(arrays, min_node_size, seed)
    return tree


def tree_route(tree: RegressionTree, x) -> int:
    """Terminal node id for a single point (ties at a threshold go right)."""
    return int(tree.route(np.asarray(x, dtype=np.float64)[None, :])[0])
