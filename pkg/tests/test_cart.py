"""Trees: split-gain oracles, exhaustive best-split search, growth rules,
routing totality."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfsurvey import TreeError, best_split, grow_tree, split_gain, tree_route

TIE_REL = 1e-12


def sse_two_pass(y):
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return 0.0
    mu = y.mean()
    return float(((y - mu) ** 2).sum())


def gain_oracle(y, x, z):
    """Brute-force average SSE reduction (independent of the library path)."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    left = x < z
    return (sse_two_pass(y) - sse_two_pass(y[left]) - sse_two_pass(y[~left])) / y.size


def exhaustive_best_split(y, X, min_node_size):
    """Try every midpoint of every column; replicate the library's tie
    rule (lowest column, then smallest threshold, at 1e-12 relative) and
    its zero-gain gate (gains must clear the squared-mean noise scale)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    best = None
    best_gain = 0.0
    for j in range(X.shape[1]):
        xs = np.unique(X[:, j])
        per_var = None
        per_var_gain = 0.0
        for a, b in zip(xs[:-1], xs[1:]):
            z = 0.5 * (a + b)
            if z <= a:
                z = b
            left = X[:, j] < z
            nl, nr = int(left.sum()), int((~left).sum())
            if nl < min_node_size or nr < min_node_size:
                continue
            g = gain_oracle(y, X[:, j], z) * y.size
            scale = nl * y[left].mean() ** 2 + nr * y[~left].mean() ** 2
            if g <= TIE_REL * scale:
                continue
            if g > per_var_gain * (1.0 + TIE_REL):
                per_var_gain = g
                per_var = z
        if per_var is not None and per_var_gain * (1.0 - TIE_REL) > best_gain:
            best_gain = per_var_gain
            best = (j, per_var)
    return best


class TestSplitGain:
    def test_hand_example(self):
        # before-SSE 100 over 4 units, perfect split: gain 100/4
        assert split_gain([0, 0, 10, 10], [1, 2, 3, 4], 2.5) == pytest.approx(25.0)

    def test_constant_y(self):
        assert split_gain([3.3] * 5, [1, 2, 3, 4, 5], 2.5) == pytest.approx(0.0)

    def test_equal_side_means(self):
        g = split_gain([0, 10, 0, 10], [1, 2, 3, 4], 2.5)
        assert g == pytest.approx(gain_oracle([0, 10, 0, 10], [1, 2, 3, 4], 2.5))
        assert g == pytest.approx(0.0)

    def test_degenerate_rejected(self):
        with pytest.raises(TreeError):
            split_gain([1, 2, 3], [1, 2, 3], 0.5)
        with pytest.raises(TreeError):
            split_gain([1, 2, 3], [1, 2, 3], 99.0)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=40),
           st.integers(0, 10**6))
    @settings(max_examples=60, deadline=None)
    def test_matches_oracle_and_nonnegative(self, ys, salt):
        rng = np.random.default_rng(salt)
        y = np.asarray(ys)
        x = rng.normal(size=y.size)
        if np.unique(x).size < 2:
            return
        xs = np.sort(np.unique(x))
        z = 0.5 * (xs[0] + xs[1])
        if z <= xs[0]:
            z = xs[1]
        g = split_gain(y, x, z)
        assert g == pytest.approx(gain_oracle(y, x, z), abs=1e-10)
        assert g >= -1e-10


class TestBestSplit:
    def test_hand_example(self):
        rule = best_split([0, 0, 10, 10], [[1.0], [2.0], [3.0], [4.0]],
                          min_node_size=1)
        assert rule.var_index == 0
        assert rule.threshold == pytest.approx(2.5)

    def test_constant_y_none(self):
        assert best_split([7, 7, 7, 7], [[1.0], [2.0], [3.0], [4.0]],
                          min_node_size=1) is None

    def test_size_starvation_none(self):
        assert best_split([0, 0, 10, 10], [[1.0], [2.0], [3.0], [4.0]],
                          min_node_size=3) is None

    def test_matches_exhaustive_oracle(self, rng):
        for _ in range(120):
            m = int(rng.integers(2, 13))
            p = int(rng.integers(1, 4))
            X = np.round(rng.normal(size=(m, p)), 1)
            y = np.round(rng.normal(size=m), 1)
            n0 = int(rng.integers(1, 4))
            got = best_split(y, X, min_node_size=n0)
            want = exhaustive_best_split(y, X, n0)
            if want is None:
                assert got is None
            else:
                assert got is not None
                assert (got.var_index, got.threshold) == \
                    (want[0], pytest.approx(want[1], rel=1e-15))


class TestGrowTree:
    def test_staircase(self):
        x = np.linspace(0, 1, 20)
        y = (x > 0.5).astype(float)
        t = grow_tree(x, y, min_node_size=1, seed=5)
        leaves = t.leaf_ids
        assert leaves.size == 2
        assert sorted(t.mean[leaves]) == [0.0, 1.0]

    def test_root_only_when_n0_is_everything(self):
        x = np.linspace(0, 1, 12)
        y = np.sin(x)
        t = grow_tree(x, y, min_node_size=12, seed=0)
        assert t.n_nodes == 1
        assert t.mean[0] == pytest.approx(y.mean())

    def test_deterministic_given_seed(self, rng):
        X = rng.normal(size=(80, 4))
        y = rng.normal(size=80)
        a = grow_tree(X, y, min_node_size=3, mtry=2, seed=99)
        b = grow_tree(X, y, min_node_size=3, mtry=2, seed=99)
        assert (a.feature == b.feature).all()
        assert (a.threshold == b.threshold).all()

    def test_insufficient_members(self):
        with pytest.raises(TreeError, match="insufficient"):
            grow_tree(np.arange(6.0), np.arange(6.0),
                      membership=np.array([1, 0, 0, 0, 0, 0]), min_node_size=2)

    def test_membership_filtering(self, rng):
        X = rng.normal(size=(30, 2))
        y = rng.normal(size=30)
        psi = np.zeros(30, dtype=int)
        psi[:10] = 1
        t = grow_tree(X, y, membership=psi, min_node_size=2, seed=1)
        assert t.count[0] == pytest.approx(10)
        assert (t.member_leaf[10:] == -1).all()
        assert (t.member_leaf[:10] >= 0).all()

    def test_min_node_size_respected(self, rng):
        X = rng.normal(size=(100, 3))
        y = rng.normal(size=100)
        for n0 in (1, 4, 9):
            t = grow_tree(X, y, min_node_size=n0, seed=3)
            assert t.count[t.leaf_ids].min() >= n0

    def test_multiplicities_weigh_means(self):
        # two duplicated rows: multiplicity 3 on one of them shifts the mean
        X = np.array([[0.0], [1.0]])
        y = np.array([0.0, 1.0])
        t = grow_tree(X, y, membership=np.array([3, 1]), min_node_size=4, seed=0)
        assert t.n_nodes == 1
        assert t.mean[0] == pytest.approx(0.25)

    def test_oracle_equivalence_whole_tree(self, rng):
        # with mtry = p the grown tree must replay the exhaustive search
        for _ in range(25):
            m = int(rng.integers(2, 13))
            p = int(rng.integers(1, 4))
            X = np.round(rng.normal(size=(m, p)), 1)
            y = np.round(rng.normal(size=m), 1)
            n0 = int(rng.integers(1, 4))
            t = grow_tree(X, y, min_node_size=n0, mtry=p, seed=11)

            def replay(rows, node):
                want = exhaustive_best_split(y[rows], X[rows], n0)
                rule = t.split_of(node)
                if want is None:
                    assert rule is None
                    return
                assert rule is not None
                assert rule.var_index == want[0]
                assert rule.threshold == pytest.approx(want[1], rel=1e-15)
                left = X[rows, rule.var_index] < rule.threshold
                replay(rows[left], int(t.left[node]))
                replay(rows[~left], int(t.right[node]))

            replay(np.arange(m), 0)


class TestRouting:
    def test_boundary_goes_right(self):
        t = grow_tree(np.array([1.0, 2.0, 3.0, 4.0]), np.array([0, 0, 10, 10.0]),
                      min_node_size=1, seed=0)
        z = t.threshold[0]
        assert t.mean[tree_route(t, np.array([z]))] == pytest.approx(10.0)
        assert t.mean[tree_route(t, np.array([z - 1e-9]))] == pytest.approx(0.0)

    def test_depth_zero(self):
        t = grow_tree(np.array([1.0, 2.0]), np.array([5.0, 5.0]),
                      min_node_size=1, seed=0)
        assert tree_route(t, np.array([99.0])) == 0

    def test_partition_totality_and_region_consistency(self, rng):
        X = rng.normal(size=(50, 3))
        y = rng.normal(size=50)
        t = grow_tree(X, y, min_node_size=2, seed=21)
        probes = rng.normal(size=(1000, 3)) * 3
        leaves = t.route(probes)
        leaf_set = set(t.leaf_ids.tolist())
        assert set(np.unique(leaves)) <= leaf_set
        # replaying the splits puts each probe in the same hyperrectangle
        for i in rng.choice(1000, 40, replace=False):
            node = 0
            while t.feature[node] >= 0:
                if probes[i, t.feature[node]] < t.threshold[node]:
                    node = int(t.left[node])
                else:
                    node = int(t.right[node])
            assert node == leaves[i]

    def test_members_route_to_their_training_leaf(self, rng):
        X = rng.normal(size=(60, 2))
        y = rng.normal(size=60)
        t = grow_tree(X, y, min_node_size=3, seed=8)
        assert (t.route(X) == t.member_leaf).all()
