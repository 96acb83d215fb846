import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relattn.datagen import (
    FAMILIES,
    NOISY_COLUMNS_7D,
    SyntheticSpec,
    gen_2d,
    gen_7d_noisy,
    gen_clusters_1d,
    gen_rel_matrix,
    generate,
    split_counts,
    split_dataset,
)
from relattn.errors import ConfigError


@pytest.mark.parametrize("family", FAMILIES)
def test_bitwise_determinism(family):
    a = generate(SyntheticSpec(family, n=50, seed=4))
    b = generate(SyntheticSpec(family, n=50, seed=4))
    assert a.X.tobytes() == b.X.tobytes()
    assert a.y.tobytes() == b.y.tobytes()
    assert a.R.tobytes() == b.R.tobytes()


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("mode", ["deterministic", "random_half"])
def test_relation_matrix_shape_rules(family, mode):
    ds, c = generate(SyntheticSpec(family, n=80, r_mode=mode, seed=1), return_clusters=True)
    np.testing.assert_array_equal(ds.R, ds.R.T)
    np.testing.assert_array_equal(np.diag(ds.R), 0.0)
    assert np.all(ds.R[c[:, None] != c[None, :]] == 0)


class TestOneDimensional:
    def test_zero_scale_is_plain_function(self):
        ds = gen_clusters_1d(SyntheticSpec("parabolas", n=100, cluster_scale=0.0))
        np.testing.assert_allclose(ds.y, ds.X[:, 0] ** 2)
        ds = gen_clusters_1d(SyntheticSpec("step", n=100, cluster_scale=0.0))
        np.testing.assert_allclose(ds.y, np.sign(ds.X[:, 0]))

    def test_parabola_range(self):
        ds = gen_clusters_1d(SyntheticSpec("parabolas", n=500, seed=2))
        assert ds.y.min() >= 0 and ds.y.max() <= 1 + 2 * 0.5
        assert np.all(np.abs(ds.X) <= 1)

    def test_cluster_proportions(self):
        n = 3000
        _, c = gen_clusters_1d(SyntheticSpec("parabolas", n=n, seed=9), return_clusters=True)
        sd = np.sqrt(n * (1 / 3) * (2 / 3))
        for k in range(3):
            assert abs((c == k).sum() - n / 3) < 3 * sd

    def test_targets_follow_clusters(self):
        ds, c = gen_clusters_1d(SyntheticSpec("step", n=40, seed=5), return_clusters=True)
        np.testing.assert_allclose(ds.y, np.sign(ds.X[:, 0]) + 0.5 * c)

    def test_wrong_family(self):
        with pytest.raises(ConfigError):
            gen_clusters_1d(SyntheticSpec("sin2d"))


class TestRelMatrix:
    def test_single_cluster_all_ones(self):
        R = gen_rel_matrix(np.zeros(4, int))
        np.testing.assert_array_equal(R, np.ones((4, 4)) - np.eye(4))

    def test_block_structure_when_sorted(self):
        c = np.array([2, 0, 1, 0, 2, 1])
        order = np.argsort(c, kind="stable")
        R = gen_rel_matrix(c)[np.ix_(order, order)]
        block = np.ones((2, 2)) - np.eye(2)
        expected = np.kron(np.eye(3), np.ones((2, 2))) * (1 - np.eye(6))
        np.testing.assert_array_equal(R, expected)
        np.testing.assert_array_equal(R[:2, :2], block)

    def test_random_half_density(self):
        c = np.zeros(200, int)
        R = gen_rel_matrix(c, "random_half", seed=3)
        pairs = 200 * 199 / 2
        density = np.triu(R, 1).sum() / pairs
        assert abs(density - 0.5) < 3 * np.sqrt(0.25 / pairs)
        np.testing.assert_array_equal(R, R.T)


class TestTwoDimensional:
    @pytest.mark.parametrize("family,fn", [
        ("linear2d", lambda a, b: a + 2 * b),
        ("square2d", lambda a, b: a + 0.5 * b**2),
        ("sin2d", lambda a, b: a + np.sin(b)),
    ])
    def test_formula_recomputation(self, family, fn):
        ds, c = gen_2d(SyntheticSpec(family, n=60, seed=7), return_clusters=True)
        np.testing.assert_allclose(ds.y, fn(ds.X[:, 0], ds.X[:, 1]) + 0.5 * c, rtol=0, atol=1e-15)

    def test_linear_cluster_zero_rows_on_plane(self):
        ds, c = gen_2d(SyntheticSpec("linear2d", n=60, seed=1), return_clusters=True)
        rows = c == 0
        np.testing.assert_allclose(ds.y[rows], ds.X[rows] @ [1.0, 2.0])

    def test_sin_bounded(self):
        ds = gen_2d(SyntheticSpec("sin2d", n=1000, seed=2))
        assert np.all(np.abs(ds.y) <= 3.0)


class TestNoisy7d:
    def test_noisy_columns_do_not_matter(self):
        ds, c = gen_7d_noisy(SyntheticSpec("noisy7d", n=100, seed=3), return_clusters=True)
        X = ds.X.copy()
        X[:, NOISY_COLUMNS_7D] = X[np.random.default_rng(0).permutation(100)][:, NOISY_COLUMNS_7D]
        recomputed = np.cos(X[:, 0]) + np.cos(X[:, 1]) + X[:, 3] + c
        np.testing.assert_allclose(recomputed, ds.y, atol=1e-15)

    def test_bounds(self):
        ds, c = gen_7d_noisy(SyntheticSpec("noisy7d", n=2000, seed=4), return_clusters=True)
        base = ds.y - c
        assert base.min() >= 2 * np.cos(1) - 1 and base.max() <= 3

    def test_random_relations_by_default(self):
        ds, c = gen_7d_noisy(SyntheticSpec("noisy7d", n=300, seed=4), return_clusters=True)
        same = (c[:, None] == c[None, :]) & ~np.eye(300, dtype=bool)
        assert 0.4 < ds.R[same].mean() < 0.6


class TestSplit:
    def test_thirds_of_300(self):
        s = split_dataset(300, seed=0)
        assert (s.background.size, s.trial.size, s.validation.size) == (100, 100, 100)

    def test_minimum(self):
        s = split_dataset(3, seed=0)
        assert sorted(np.concatenate([s.background, s.trial, s.validation])) == [0, 1, 2]

    def test_counts(self):
        s = split_counts(100, 30, 30, seed=1)
        assert (s.background.size, s.trial.size, s.validation.size) == (40, 30, 30)

    def test_infeasible(self):
        with pytest.raises(ConfigError):
            split_dataset(2)
        with pytest.raises(ConfigError):
            split_dataset(10, (0.6, 0.6, 0.1))

    @settings(max_examples=1000, deadline=None)
    @given(st.integers(3, 400), st.integers(0, 2**31), st.floats(0.1, 0.5), st.floats(0.1, 0.4))
    def test_disjoint_union(self, n, seed, fb, ft):
        fv = max(0.0, min(1 - fb - ft, 0.3))
        try:
            s = split_dataset(n, (fb, ft, fv), seed)
        except ConfigError:
            return
        parts = np.concatenate([s.background, s.trial, s.validation])
        assert np.unique(parts).size == parts.size
        assert parts.min() >= 0 and parts.max() < n
        again = split_dataset(n, (fb, ft, fv), seed)
        np.testing.assert_array_equal(again.trial, s.trial)
