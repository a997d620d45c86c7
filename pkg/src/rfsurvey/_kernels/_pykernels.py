"""Pure-numpy tree kernels: the reference implementation.

The compiled twin (``_cykernels``) must reproduce these functions bit for
bit: identical RNG stream, identical node order, identical floating-point
operation order.  Keep the two in lockstep when editing either one.

Conventions shared by both backends:

* Node ids are assigned in creation order while processing nodes in
  depth-first, left-child-first order (root is 0; a split processed at
  node v creates ids ``next``, ``next+1`` for its left/right child).
* A query point goes left iff ``x[var] < threshold``.
* Candidate predictors are drawn with a partial Fisher-Yates shuffle
  driven by a SplitMix64 stream seeded per tree, then scanned in
  ascending column order.
* Member rows keep their original relative order inside every node, so
  all prefix sums are over a well-defined sequence.
* Gains that differ by at most ``TIE_REL`` (relative) count as ties and
  resolve to the lowest column index, then the smallest threshold.
"""

from __future__ import annotations

import numpy as np

TIE_REL = 1e-12
PURITY_REL = 1e-12

_MASK64 = (1 << 64) - 1
_PHI = 0x9E3779B97F4A7C15


def splitmix_next(state: int) -> tuple[int, int]:
    """One SplitMix64 step; returns (value, new_state)."""
    state = (state + _PHI) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def _bounded(state: int, k: int) -> tuple[int, int]:
    """Uniform integer in [0, k) by masked rejection (exactly uniform)."""
    mask = k - 1
    mask |= mask >> 1
    mask |= mask >> 2
    mask |= mask >> 4
    mask |= mask >> 8
    mask |= mask >> 16
    mask |= mask >> 32
    while True:
        r, state = splitmix_next(state)
        r &= mask
        if r < k:
            return r, state


def draw_candidates(n_columns: int, mtry: int, state: int) -> tuple[list[int], int]:
    """Draw ``mtry`` distinct column indices, returned sorted ascending."""
    cols = list(range(n_columns))
    for i in range(mtry):
        j, state = _bounded(state, n_columns - i)
        j += i
        cols[i], cols[j] = cols[j], cols[i]
    chosen = sorted(cols[:mtry])
    return chosen, state


def _seqsum(a: np.ndarray) -> float:
    """Strictly sequential (left-to-right) float64 sum."""
    if a.size == 0:
        return 0.0
    return float(np.cumsum(a)[-1])


def scan_column(xv, cs, cys, tc, tcy, t2, min_count):
    """Best admissible split boundary along one sorted column.

    ``xv``/``cs``/``cys`` are the node's x-values, counts and count*y
    products already in sorted column order.  Returns
    (gain_numerator, threshold, boundary_rank) or None; ``gain_numerator``
    is the SSE reduction, not yet divided by the node count.
    """
    if xv.shape[0] < 2:
        return None
    pc = np.cumsum(cs)
    pcy = np.cumsum(cys)
    cl = pc[:-1]
    valid = (xv[:-1] < xv[1:]) & (cl >= min_count) & ((tc - cl) >= min_count)
    if not valid.any():
        return None
    bidx = np.nonzero(valid)[0]
    cl = cl[bidx]
    cyl = pcy[:-1][bidx]
    cr = tc - cl
    cyr = tcy - cyl
    gl = cyl * cyl / cl
    gr = cyr * cyr / cr
    gains = gl + gr - t2
    # a boundary counts only if its gain clears the cancellation noise of
    # the two squared-mean terms (exact-zero-gain splits must not win)
    alive = gains > TIE_REL * (gl + gr)
    if not alive.any():
        return None
    gmax = float(gains[alive].max())
    gains = np.where(alive, gains, -np.inf)
    pos = int(np.argmax(gains >= gmax * (1.0 - TIE_REL)))
    i = int(bidx[pos])
    a = float(xv[i])
    b = float(xv[i + 1])
    z = 0.5 * (a + b)
    if z <= a:
        z = b
    return float(gains[pos]), z, i


def _best_split_node(X, y, c, cy, idx, tc, tcy, candidates, min_count):
    """Scan candidate columns (ascending); lowest column wins ties."""
    t2 = tcy * tcy / tc
    best_gain = 0.0
    best_var = -1
    best_z = 0.0
    for j in candidates:
        xv = X[idx, j]
        order = np.argsort(xv, kind="stable")
        found = scan_column(xv[order], c[idx][order], cy[idx][order],
                            tc, tcy, t2, min_count)
        if found is None:
            continue
        gain, z, _ = found
        if gain * (1.0 - TIE_REL) > best_gain:
            best_gain = gain
            best_var = j
            best_z = z
    if best_var < 0:
        return None
    return best_var, best_z, best_gain / tc


def grow(X, y, c, min_count, mtry, seed):
    """Grow one regression tree; see module docstring for conventions.

    Parameters are the member rows only: ``X`` (m, p) float64, ``y`` (m,)
    float64, ``c`` (m,) float64 per-row multiplicities, ``min_count`` the
    smallest allowed child weight, ``mtry`` columns per split, ``seed``
    the SplitMix64 state.

    Returns dict of flat node arrays plus the leaf id of every member row.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    m, p = X.shape
    if m == 0:
        raise ValueError("cannot grow a tree with no member rows")
    mtry = min(max(int(mtry), 1), p)
    cy = c * y
    state = int(seed) & _MASK64

    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    count = [0.0]
    mean = [0.0]
    leaf_of = np.empty(m, dtype=np.int32)

    stack = [(0, np.arange(m, dtype=np.intp))]
    while stack:
        node, idx = stack.pop()
        tc = _seqsum(c[idx])
        tcy = _seqsum(cy[idx])
        node_mean = tcy / tc
        count[node] = tc
        mean[node] = node_mean

        split = None
        if tc >= 2.0 * min_count:
            d = y[idx] - node_mean
            sse = _seqsum(c[idx] * (d * d))
            if sse > PURITY_REL * (tc * node_mean * node_mean):
                candidates, state = draw_candidates(p, mtry, state)
                split = _best_split_node(X, y, c, cy, idx, tc, tcy,
                                         candidates, min_count)
        if split is None:
            leaf_of[idx] = node
            continue

        var, z, _ = split
        go_left = X[idx, var] < z
        left_id = len(feature)
        right_id = left_id + 1
        feature[node] = var
        threshold[node] = z
        left[node] = left_id
        right[node] = right_id
        for _ in range(2):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            count.append(0.0)
            mean.append(0.0)
        stack.append((right_id, idx[~go_left]))
        stack.append((left_id, idx[go_left]))

    return {
        "feature": np.asarray(feature, dtype=np.int32),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int32),
        "right": np.asarray(right, dtype=np.int32),
        "count": np.asarray(count, dtype=np.float64),
        "mean": np.asarray(mean, dtype=np.float64),
        "leaf_of": leaf_of,
    }


def route(feature, threshold, left, right, Xq):
    """Leaf node id for every row of ``Xq`` (level-synchronous walk)."""
    Xq = np.ascontiguousarray(Xq, dtype=np.float64)
    q = Xq.shape[0]
    pos = np.zeros(q, dtype=np.int32)
    if feature[0] < 0:
        return pos
    rows = np.arange(q)
    while rows.size:
        node = pos[rows]
        f = feature[node]
        go_left = Xq[rows, f] < threshold[node]
        pos[rows] = np.where(go_left, left[node], right[node])
        rows = rows[feature[pos[rows]] >= 0]
    return pos
