import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relattn.core import ParamStore, Tensor, grad
from relattn.data import RelDataset, SplitIndex
from relattn.errors import ConfigError, ShapeError
from relattn.nw import (
    NwFitConfig,
    NwModel,
    NwProblem,
    init_mlp,
    mlp_embed_forward,
    nw_fit,
    nw_predict_learnable_norm,
    nw_predict_mlp,
    nw_predict_rel,
    nw_predict_rel_features,
    nw_predict_vanilla,
    nw_weights,
)

from helpers import central_diff, max_rel_err


# -- independent scalar oracles ------------------------------------------------

def oracle_nw(xs, ys, xq, sigma, gamma=0.0, r=None, omega=None, w=None):
    """Direct loop evaluation of the kernel-weighted average."""
    num = den = 0.0
    for i, (xi, yi) in enumerate(zip(xs, ys)):
        if w is None:
            dist = sum((a - b) ** 2 for a, b in zip(xq, xi)) / sigma
        else:
            dist = sum(wk * wk * (a - b) ** 2 for wk, a, b in zip(w, xq, xi))
        if omega is not None:
            dist += omega[i] / sigma
        k = math.exp(-dist + (gamma * r[i] if r is not None else 0.0))
        num += yi * k
        den += k
    return num / den


def oracle_mlp(layers, x):
    h = list(x)
    for k, (W, b) in enumerate(layers):
        h = [sum(h[i] * W[i][j] for i in range(len(h))) + b[j] for j in range(len(b))]
        if k < len(layers) - 1:
            h = [max(v, 0.0) for v in h]
    return h


def model(variant="rel_kernel", sigma=1.0, gamma=0.0, **kw):
    return NwModel(variant, log_sigma=math.log(sigma), gamma=gamma, **kw)


BG_X = np.array([[0.0], [1.0], [2.0]])
BG_Y = np.array([1.0, 3.0, 0.0])


class TestVanilla:
    def test_single_point_returns_its_target(self):
        out = nw_predict_vanilla(model("vanilla", 0.3), [[0.4, -1]], [2.5], [[5, 5], [0, 0]])
        np.testing.assert_allclose(out, [2.5, 2.5])

    @pytest.mark.parametrize("sigma", [0.01, 0.5, 1.0, 10.0])
    def test_symmetric_pair(self, sigma):
        out = nw_predict_vanilla(model("vanilla", sigma), [[-1.0], [1.0]], [0.0, 2.0], [[0.0]])
        assert out[0] == pytest.approx(1.0, abs=1e-14)

    def test_matches_direct_formula(self):
        expected = oracle_nw([[0.0], [1.0], [2.0]], [1, 3, 0], [0.5], 1.0)
        out = nw_predict_vanilla(model("vanilla"), BG_X, BG_Y, [[0.5]])
        assert out[0] == pytest.approx(expected, rel=1e-14)
        # frozen from the loop oracle: (e^-.25 + 3e^-.25) / (2e^-.25 + e^-2.25)
        assert expected == pytest.approx(4 / (2 + math.exp(-2)), rel=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            nw_predict_vanilla(model("vanilla"), BG_X, BG_Y, [[0.5, 1.0]])


class TestRelKernel:
    def test_gamma_zero_reduces_to_vanilla(self):
        rng = np.random.default_rng(0)
        Xb, yb, Xq = rng.normal(size=(20, 3)), rng.normal(size=20), rng.normal(size=(7, 3))
        r = rng.integers(0, 2, size=(7, 20)).astype(float)
        a = nw_predict_rel(model(sigma=0.7, gamma=0.0), Xb, yb, Xq, r)
        b = nw_predict_vanilla(model("vanilla", 0.7), Xb, yb, Xq)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_zero_relations_reduce_to_vanilla(self):
        rng = np.random.default_rng(1)
        Xb, yb, Xq = rng.normal(size=(15, 2)), rng.normal(size=15), rng.normal(size=(4, 2))
        a = nw_predict_rel(model(sigma=1.3, gamma=5.0), Xb, yb, Xq, np.zeros((4, 15)))
        b = nw_predict_vanilla(model("vanilla", 1.3), Xb, yb, Xq)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_matches_direct_formula(self):
        r = np.array([[1.0, 0.0, 0.0]])
        out = nw_predict_rel(model(sigma=1.0, gamma=2.0), BG_X, BG_Y, [[0.5]], r)
        expected = oracle_nw(BG_X.tolist(), BG_Y, [0.5], 1.0, 2.0, r[0])
        assert out[0] == pytest.approx(expected, rel=1e-14)

    def test_relation_shape_checked(self):
        with pytest.raises(ShapeError):
            nw_predict_rel(model(), BG_X, BG_Y, [[0.5]], np.zeros((1, 2)))

    def test_gamma_drives_towards_related_point(self):
        r = np.array([[0.0, 0.0, 1.0]])
        preds = [nw_predict_rel(model(gamma=g), BG_X, BG_Y, [[0.5]], r)[0] for g in (0, 1, 2, 4, 8)]
        gaps = np.abs(np.array(preds) - BG_Y[2])
        assert np.all(np.diff(gaps) < 0)


class TestRelFeatures:
    def test_identical_relation_rows_match_vanilla(self):
        rng = np.random.default_rng(2)
        Xb, yb, Xq = rng.normal(size=(10, 2)), rng.normal(size=10), rng.normal(size=(3, 2))
        row = rng.integers(0, 2, size=12).astype(float)
        a = nw_predict_rel_features(model("rel_features", 0.8), Xb, yb, np.tile(row, (10, 1)), Xq,
                                    np.tile(row, (3, 1)))
        b = nw_predict_vanilla(model("vanilla", 0.8), Xb, yb, Xq)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_matches_direct_formula(self):
        Rb = np.array([[0, 1, 0, 1], [1, 0, 0, 0], [0, 0, 0, 1]], float)
        rq = np.array([[1, 1, 0, 0]], float)
        omega = [sum((a - b) ** 2 for a, b in zip(rq[0], Rb[i])) for i in range(3)]
        assert omega == [2.0, 1.0, 3.0]
        expected = oracle_nw(BG_X.tolist(), BG_Y, [0.5], 2.0, omega=omega)
        out = nw_predict_rel_features(model("rel_features", 2.0), BG_X, BG_Y, Rb, [[0.5]], rq)
        assert out[0] == pytest.approx(expected, rel=1e-14)


class TestLearnableNorm:
    def test_unit_weights_match_rel_with_unit_sigma(self):
        rng = np.random.default_rng(3)
        Xb, yb, Xq = rng.normal(size=(12, 4)), rng.normal(size=12), rng.normal(size=(5, 4))
        r = rng.integers(0, 2, size=(5, 12)).astype(float)
        a = nw_predict_learnable_norm(model("learnable_norm", gamma=1.5, w=np.ones(4)), Xb, yb, Xq, r)
        b = nw_predict_rel(model(sigma=1.0, gamma=1.5), Xb, yb, Xq, r)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_zero_weight_nullifies_feature(self):
        rng = np.random.default_rng(4)
        Xb, yb, Xq = rng.normal(size=(12, 3)), rng.normal(size=12), rng.normal(size=(5, 3))
        r = rng.integers(0, 2, size=(5, 12)).astype(float)
        m = model("learnable_norm", gamma=0.7, w=np.array([1.2, 0.0, -0.4]))
        base = nw_predict_learnable_norm(m, Xb, yb, Xq, r)
        Xb2, Xq2 = Xb.copy(), Xq.copy()
        Xb2[:, 1] = rng.normal(size=12) * 100
        Xq2[:, 1] = rng.normal(size=5) * 100
        np.testing.assert_array_equal(nw_predict_learnable_norm(m, Xb2, yb, Xq2, r), base)

    def test_matches_direct_formula(self):
        Xb = np.array([[0.0, 1.0], [1.0, -1.0], [2.0, 0.5]])
        w = [0.5, -2.0]
        r = np.array([[0.0, 1.0, 1.0]])
        expected = oracle_nw(Xb.tolist(), BG_Y, [0.3, 0.2], 1.0, 0.8, r[0], w=w)
        out = nw_predict_learnable_norm(model("learnable_norm", gamma=0.8, w=np.array(w)), Xb, BG_Y,
                                        [[0.3, 0.2]], r)
        assert out[0] == pytest.approx(expected, rel=1e-13)


class TestMlp:
    def test_zero_net_is_zero(self):
        p = {k: np.zeros_like(v) for k, v in init_mlp((3, 5, 5, 2), np.random.default_rng(0)).items()}
        np.testing.assert_array_equal(mlp_embed_forward(p, np.ones((4, 3))), np.zeros((4, 2)))

    def test_identity_construction(self):
        # x -> (relu(x), relu(-x)) -> same -> relu(x) - relu(-x) = x
        p = {"mlp.w0": np.array([[1.0, -1.0]]), "mlp.b0": np.zeros((1, 2)),
             "mlp.w1": np.eye(2), "mlp.b1": np.zeros((1, 2)),
             "mlp.w2": np.array([[1.0], [-1.0]]), "mlp.b2": np.zeros((1, 1))}
        x = np.linspace(-2, 2, 9)[:, None]
        np.testing.assert_allclose(mlp_embed_forward(p, x), x, atol=1e-15)

    def test_matches_matrix_oracle(self):
        rng = np.random.default_rng(5)
        p = init_mlp((2, 4, 4, 3), rng)
        for k in range(3):
            p[f"mlp.b{k}"] = rng.normal(size=p[f"mlp.b{k}"].shape)
        x = rng.normal(size=(6, 2))
        layers = [(p[f"mlp.w{k}"].tolist(), p[f"mlp.b{k}"][0].tolist()) for k in range(3)]
        expected = [oracle_mlp(layers, row) for row in x.tolist()]
        np.testing.assert_allclose(mlp_embed_forward(p, x), expected, rtol=1e-13)

    def test_shape_mismatch(self):
        p = init_mlp((2, 3, 3, 1), np.random.default_rng(0))
        with pytest.raises(ShapeError):
            mlp_embed_forward(p, np.ones((2, 5)))

    def _identity_mlp(self, d):
        eye = np.eye(d)
        return {"mlp.w0": np.hstack([eye, -eye]), "mlp.b0": np.zeros((1, 2 * d)),
                "mlp.w1": np.eye(2 * d), "mlp.b1": np.zeros((1, 2 * d)),
                "mlp.w2": np.vstack([eye, -eye]), "mlp.b2": np.zeros((1, d))}

    def test_identity_embedder_matches_rel(self):
        rng = np.random.default_rng(6)
        Xb, yb, Xq = rng.normal(size=(9, 2)), rng.normal(size=9), rng.normal(size=(4, 2))
        r = rng.integers(0, 2, size=(4, 9)).astype(float)
        m = model("mlp_embed", sigma=0.6, gamma=1.1, mlp=self._identity_mlp(2))
        np.testing.assert_allclose(nw_predict_mlp(m, Xb, yb, Xq, r),
                                   nw_predict_rel(model(sigma=0.6, gamma=1.1), Xb, yb, Xq, r), atol=1e-12)

    def test_zero_embedder_uses_relations_only(self):
        p = {k: np.zeros_like(v) for k, v in init_mlp((1, 3, 3, 2), np.random.default_rng(0)).items()}
        r = np.array([[1.0, 0.0, 1.0]])
        out = nw_predict_mlp(model("mlp_embed", gamma=2.0, mlp=p), BG_X, BG_Y, [[7.0]], r)
        e = math.exp(2.0)
        assert out[0] == pytest.approx((1 * e + 3 + 0 * e) / (2 * e + 1), rel=1e-14)

    def test_composition_oracle(self):
        rng = np.random.default_rng(7)
        p = init_mlp((1, 4, 4, 2), rng)
        layers = [(p[f"mlp.w{k}"].tolist(), p[f"mlp.b{k}"][0].tolist()) for k in range(3)]
        emb_b = [oracle_mlp(layers, row) for row in BG_X.tolist()]
        emb_q = oracle_mlp(layers, [0.5])
        r = np.array([[0.0, 1.0, 0.0]])
        expected = oracle_nw(emb_b, BG_Y, emb_q, 0.5, 1.0, r[0])
        out = nw_predict_mlp(model("mlp_embed", sigma=0.5, gamma=1.0, mlp=p), BG_X, BG_Y, [[0.5]], r)
        assert out[0] == pytest.approx(expected, rel=1e-12)

    def test_missing_params(self):
        with pytest.raises(ConfigError):
            nw_predict_mlp(model("mlp_embed"), BG_X, BG_Y, [[0.5]], np.zeros((1, 3)))


# -- invariants ----------------------------------------------------------------

def _random_instance(rng, n_b=8, n_q=4, d=2, P=None):
    Xb, yb, Xq = rng.normal(size=(n_b, d)), rng.normal(size=n_b), rng.normal(size=(n_q, d))
    r = rng.integers(0, 2, size=(n_q, n_b)).astype(float)
    P = P or n_b
    Rb = rng.integers(0, 2, size=(n_b, P)).astype(float)
    Rq = rng.integers(0, 2, size=(n_q, P)).astype(float)
    return Xb, yb, Xq, r, Rb, Rq


def _models(rng, d):
    sig, gam = math.exp(rng.normal()), rng.normal() * 3
    return [
        model("vanilla", sig),
        model("rel_kernel", sig, gam),
        model("rel_features", sig),
        model("learnable_norm", gamma=gam, w=rng.normal(size=d)),
        model("mlp_embed", sig, gam, mlp=init_mlp((d, 5, 5, 3), rng)),
    ]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_weights_are_convex(seed):
    rng = np.random.default_rng(seed)
    Xb, yb, Xq, r, Rb, Rq = _random_instance(rng)
    for m in _models(rng, 2):
        rq = Rq if m.variant == "rel_features" else r
        W = nw_weights(m, Xb, Xq, rq, Rb)
        assert np.all(W >= 0)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-9)
        from relattn.nw import nw_predict
        pred = nw_predict(m, Xb, yb, Xq, rq, Rb)
        assert np.all(pred >= yb.min() - 1e-12) and np.all(pred <= yb.max() + 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_background_permutation_invariance(seed):
    from relattn.nw import nw_predict
    rng = np.random.default_rng(seed)
    Xb, yb, Xq, r, Rb, Rq = _random_instance(rng, n_b=10, P=10)
    perm = rng.permutation(10)
    for m in _models(rng, 2):
        if m.variant == "rel_features":
            a = nw_predict(m, Xb, yb, Xq, Rq, Rb)
            b = nw_predict(m, Xb[perm], yb[perm], Xq, Rq, Rb[perm])
        else:
            a = nw_predict(m, Xb, yb, Xq, r)
            b = nw_predict(m, Xb[perm], yb[perm], Xq, r[:, perm])
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_exclusion_mask_drops_self():
    out = nw_predict_vanilla(model("vanilla"), BG_X, BG_Y, BG_X, exclude=np.eye(3, dtype=bool))
    expected = [oracle_nw(np.delete(BG_X, i, 0).tolist(), np.delete(BG_Y, i), BG_X[i], 1.0) for i in range(3)]
    np.testing.assert_allclose(out, expected, rtol=1e-14)


# -- gradients -----------------------------------------------------------------

def _tiny_dataset(seed, n=9, d=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = rng.normal(size=n)
    R = np.triu(rng.integers(0, 2, size=(n, n)).astype(float), 1)
    return X, y, R + R.T


@pytest.mark.parametrize("variant", ["vanilla", "rel_kernel", "rel_features", "learnable_norm", "mlp_embed"])
def test_trial_loss_gradient_matches_finite_differences(variant):
    X, y, R = _tiny_dataset(3)
    bg, tr = np.arange(5), np.arange(5, 9)
    rng = np.random.default_rng(0)
    m = NwModel(variant, log_sigma=0.2, gamma=0.6,
                w=rng.normal(size=2) if variant == "learnable_norm" else None,
                mlp=init_mlp((2, 4, 4, 3), rng) if variant == "mlp_embed" else None)
    problem = NwProblem.build(m, X, y, R, bg, tr)
    params = ParamStore(m.param_values())
    analytic = grad(problem.loss(dict(params.items())), params)
    numeric = central_diff(lambda v: float(problem.loss({k: Tensor(a) for k, a in v.items()}).data),
                           m.param_values(), h=1e-5)
    for k in analytic:
        if variant in ("vanilla", "rel_features") and k == "gamma":
            assert analytic[k] == 0.0
            continue
        assert max_rel_err(analytic[k], numeric[k], floor=1e-7) < 1e-4, k


def test_three_point_gradient():
    # rel_kernel loss on background {0, 1}, trial {2}: d/dgamma and d/dlog_sigma
    X = np.array([[0.0], [1.0], [0.4]])
    y = np.array([0.0, 1.0, 0.2])
    R = np.array([[0, 0, 1], [0, 0, 0], [1, 0, 0]], float)
    m = NwModel("rel_kernel", log_sigma=0.1, gamma=0.3)
    problem = NwProblem.build(m, X, y, R, [0, 1], [2])
    params = ParamStore(m.param_values())
    analytic = grad(problem.loss(dict(params.items())), params)

    def loss(v):
        return (oracle_nw([[0.0], [1.0]], [0.0, 1.0], [0.4], math.exp(float(v["log_sigma"])),
                          float(v["gamma"]), [1.0, 0.0]) - 0.2) ** 2

    numeric = central_diff(loss, m.param_values())
    for k in ("log_sigma", "gamma"):
        assert max_rel_err(analytic[k], numeric[k]) < 1e-4


# -- fitting -------------------------------------------------------------------

class TestFit:
    def test_constant_targets(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, size=(60, 1))
        ds = RelDataset(X, np.full(60, 2.5), np.zeros((60, 60)))
        split = SplitIndex(np.arange(20), np.arange(20, 40), np.arange(40, 60))
        res = nw_fit(ds, split, "rel_kernel", NwFitConfig(epochs=50))
        assert res.validation_mse < 1e-20
        assert res.trial_mse < 1e-20

    def test_linear_vanilla_smoke(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-1, 1, size=(200, 1))
        ds = RelDataset(X, 3 * X[:, 0] + 0.05 * rng.normal(size=200), np.zeros((200, 200)))
        from relattn.datagen import split_dataset
        res = nw_fit(ds, split_dataset(200, seed=1), "vanilla")
        assert res.validation_r2 > 0.9
        assert res.history[-1] <= res.history[0]

    def test_empty_trial_rejected(self):
        ds = RelDataset(np.zeros((3, 1)), np.zeros(3), np.zeros((3, 3)))
        with pytest.raises(ConfigError):
            nw_fit(ds, SplitIndex([0, 1], [], [2]), "vanilla")

    def test_fitted_model_starts_from_vanilla(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(30, 2))
        ds = RelDataset(X, X[:, 0], np.zeros((30, 30)))
        split = SplitIndex(np.arange(10), np.arange(10, 20), np.arange(20, 30))
        a = nw_fit(ds, split, "rel_kernel", NwFitConfig(epochs=0))
        b = nw_fit(ds, split, "vanilla", NwFitConfig(epochs=0))
        assert a.validation_mse == pytest.approx(b.validation_mse, abs=1e-14)
