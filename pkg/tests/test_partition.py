"""Principal directions, median splits and random divisions."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from knngraph import Dataset, DivisionConfig, InvalidInputError, random_division, random_principal_direction, split_subset
from knngraph.partition import _random_division_reference, check_division, expected_depth_bound
from oracles import gaussian_points


def _angle(u, v):
    c = abs(float(np.dot(u, v))) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.acos(min(1.0, c))


def _split_oracle(proj, ids):
    """Median split by sorting; ties to the smaller side in id order."""
    order = sorted(range(len(ids)), key=lambda t: ids[t])
    med = float(np.median(proj))
    left = [ids[t] for t in order if proj[t] < med]
    right = [ids[t] for t in order if proj[t] > med]
    if not left and not right:
        h = (len(ids) + 1) // 2
        s = sorted(ids)
        return s[:h], s[h:]
    for t in order:
        if proj[t] == med:
            (left if len(left) <= len(right) else right).append(ids[t])
    return sorted(left), sorted(right)


class TestPrincipalDirection:
    def test_points_on_a_line(self):
        t = np.linspace(-3.0, 5.0, 40)
        ds = Dataset(np.outer(t, [1.0, 0.0, 0.0]))
        v = random_principal_direction(ds, np.arange(40), DivisionConfig(), np.random.default_rng(1))
        assert np.linalg.norm(v) == pytest.approx(1.0)
        assert _angle(v, [1.0, 0.0, 0.0]) < 1e-3

    def test_anisotropic_cloud_frequency(self):
        ok = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((2000, 2)) * [10.0, 1.0]
            ds = Dataset(X)
            v = random_principal_direction(ds, np.arange(2000), DivisionConfig(), rng)
            ok += _angle(v, [1.0, 0.0]) < math.radians(5)
        assert ok >= 99

    def test_matches_dense_eigensolver(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((300, 6)) @ np.diag([5.0, 2.0, 1.0, 1.0, 0.5, 0.3])
        X = X @ np.linalg.qr(rng.standard_normal((6, 6)))[0]
        ds = Dataset(X)
        cfg = DivisionConfig(pca_sample=300, power_iters=500)
        v = random_principal_direction(ds, np.arange(300), cfg, rng)
        w, V = np.linalg.eigh(np.cov(X.T))
        assert _angle(v, V[:, -1]) < 1e-6

    def test_identical_points_give_none(self):
        ds = Dataset(np.ones((10, 3)))
        assert random_principal_direction(ds, np.arange(10), DivisionConfig(), np.random.default_rng(0)) is None

    def test_needs_two_points(self):
        ds = Dataset(gaussian_points(5, 2, 0))
        with pytest.raises(InvalidInputError):
            random_principal_direction(ds, [3], DivisionConfig(), np.random.default_rng(0))


class TestSplitSubset:
    def test_four_projections(self):
        ds = Dataset(np.array([[3.0, 0.0], [1.0, 5.0], [4.0, -1.0], [2.0, 9.0]]))
        left, right = split_subset(ds, [0, 1, 2, 3], np.array([1.0, 0.0]))
        assert left.tolist() == [1, 3] and right.tolist() == [0, 2]

    def test_all_equal_projections(self):
        ds = Dataset(np.array([[1.0, t] for t in range(5)]))
        left, right = split_subset(ds, [4, 2, 0, 3, 1], np.array([1.0, 0.0]))
        assert left.tolist() == [0, 1, 2] and right.tolist() == [3, 4]

    def test_none_direction_halves_by_id(self):
        ds = Dataset(gaussian_points(7, 2, 0))
        left, right = split_subset(ds, [6, 5, 4, 3, 2, 1, 0], None)
        assert left.tolist() == [0, 1, 2, 3] and right.tolist() == [4, 5, 6]

    def test_balanced_over_seeds(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            m = 1000 + seed % 2
            ds = Dataset(rng.uniform(size=(m, 4)))
            v = rng.standard_normal(4)
            left, right = split_subset(ds, np.arange(m), v / np.linalg.norm(v))
            assert abs(left.size - right.size) <= 1

    @given(vals=st.lists(st.integers(0, 4), min_size=2, max_size=40))
    def test_ties_match_oracle(self, vals):
        X = np.array([[float(v), 1.0] for v in vals])
        ds = Dataset(X)
        ids = list(range(len(vals)))[::-1]
        left, right = split_subset(ds, ids, np.array([1.0, 0.0]))
        ol, orr = _split_oracle([float(vals[i]) for i in ids], ids)
        assert left.tolist() == ol and right.tolist() == orr
        assert abs(left.size - right.size) <= 1 or len(set(vals)) > 1


class TestRandomDivision:
    def test_below_bound_single_leaf(self):
        ds = Dataset(gaussian_points(100, 4, 0))
        div = random_division(ds, DivisionConfig(g=500), np.random.default_rng(0))
        assert len(div.leaves) == 1 and div.depth == 0
        assert div.leaves[0].tolist() == list(range(100))

    def test_one_forced_split(self):
        # leaves hold strictly fewer than g points, so 998 points split once
        ds = Dataset(gaussian_points(998, 4, 0))
        div = random_division(ds, DivisionConfig(g=500), np.random.default_rng(0))
        assert div.sizes == [499, 499] and div.depth == 1
        assert check_division(div, 998, 500) == []

    def test_exactly_twice_bound_splits_twice(self):
        ds = Dataset(gaussian_points(1000, 4, 0))
        div = random_division(ds, DivisionConfig(g=500), np.random.default_rng(0))
        assert sorted(div.sizes) == [250, 250, 250, 250]
        assert sorted(np.concatenate(div.leaves).tolist()) == list(range(1000))

    def test_large_partition(self):
        ds = Dataset(gaussian_points(20000, 8, 1, clusters=20))
        div = random_division(ds, DivisionConfig(g=500), np.random.default_rng(3))
        assert check_division(div, 20000, 500) == []
        assert max(div.sizes) < 500
        assert div.depth <= expected_depth_bound(20000, 500)

    @pytest.mark.parametrize("g", [2, 3, 17, 64])
    def test_small_bounds(self, g):
        ds = Dataset(gaussian_points(300, 3, g))
        div = random_division(ds, DivisionConfig(g=g), np.random.default_rng(g))
        assert check_division(div, 300, g) == []

    def test_degenerate_data_uses_id_halves(self):
        ds = Dataset(np.ones((40, 3)))
        div = random_division(ds, DivisionConfig(g=10), np.random.default_rng(0))
        assert check_division(div, 40, 10) == []
        # 40 -> 20 -> 10 -> 5: seven splits, all without a usable direction
        assert div.degenerate_splits == 7
        assert [leaf.tolist() for leaf in div.leaves] == [list(range(s, s + 5)) for s in range(0, 40, 5)]

    def test_deterministic(self):
        ds = Dataset(gaussian_points(3000, 6, 2))
        cfg = DivisionConfig(g=100)
        a = random_division(ds, cfg, np.random.default_rng(42))
        b = random_division(ds, cfg, np.random.default_rng(42))
        assert [x.tolist() for x in a.leaves] == [x.tolist() for x in b.leaves]

    def test_seed_defaults_to_config(self):
        ds = Dataset(gaussian_points(800, 3, 2))
        a = random_division(ds, DivisionConfig(g=100, seed=5))
        b = random_division(ds, DivisionConfig(g=100), np.random.default_rng(5))
        assert [x.tolist() for x in a.leaves] == [x.tolist() for x in b.leaves]

    def test_distinct_seeds_differ(self):
        ds = Dataset(gaussian_points(1000, 8, 9))
        cfg = DivisionConfig(g=100)
        for s in range(10):
            a = random_division(ds, cfg, np.random.default_rng(2 * s)).leaf_labels(1000)
            b = random_division(ds, cfg, np.random.default_rng(2 * s + 1)).leaf_labels(1000)
            # compare co-membership, which is invariant to leaf numbering
            assert not np.array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :])

    @pytest.mark.parametrize("n,g,seed", [(500, 40, 0), (2000, 100, 1), (1500, 7, 2), (4000, 500, 3)])
    def test_compiled_matches_python_recursion(self, n, g, seed):
        ds = Dataset(gaussian_points(n, 5, seed, clusters=4))
        cfg = DivisionConfig(g=g, pca_sample=200)
        a = random_division(ds, cfg, np.random.default_rng(seed))
        b = _random_division_reference(ds, cfg, np.random.default_rng(seed))
        assert [x.tolist() for x in a.leaves] == [x.tolist() for x in b.leaves]
        assert a.depth == b.depth


class TestDivisionConfig:
    @pytest.mark.parametrize("kw", [dict(g=1), dict(pca_sample=1), dict(power_iters=0)])
    def test_rejects(self, kw):
        with pytest.raises(InvalidInputError):
            DivisionConfig(**kw)
