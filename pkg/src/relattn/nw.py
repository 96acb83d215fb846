"""Nadaraya-Watson kernel regression with inter-sample relationships.

All variants predict a convex combination of background targets,

    y(x_s) = sum_i y_i softmax_i(logit(s, i)),

and differ only in the logit:

========================  ==================================================
vanilla                   -|x_s - x_i|^2 / sigma
rel_kernel                -|x_s - x_i|^2 / sigma + gamma * r_si
rel_features              -(|x_s - x_i|^2 + sum_p (r_sp - r_ip)^2) / sigma
learnable_norm            -sum_k w_k^2 (x_sk - x_ik)^2 + gamma * r_si
mlp_embed                 -|g(x_s) - g(x_i)|^2 / sigma + gamma * r_si
========================  ==================================================

``sigma`` is stored as ``log_sigma``.  Every relationship-aware model starts
at ``log_sigma = 0``, ``gamma = 0``, ``w = 1``, which is exactly the vanilla
estimator with unit bandwidth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import AdamConfig, ParamStore, Tensor, adam_step, ad, dropout_apply, grad, softmax_rows
from .data import RelDataset, SplitIndex
from .errors import ConfigError, DivergedError, ShapeError
from .metrics import mse, r2_score

logger = logging.getLogger(__name__)

VARIANTS = ("vanilla", "rel_kernel", "rel_features", "learnable_norm", "mlp_embed")


# -- MLP embedder -------------------------------------------------------------

def init_mlp(sizes, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-normal weights and zero biases for an MLP with layer ``sizes``."""
    params = {}
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"mlp.w{k}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params[f"mlp.b{k}"] = np.zeros((1, fan_out))
    return params


def _mlp_depth(params) -> int:
    return sum(1 for k in params if k.startswith("mlp.w"))


def mlp_embed_forward(params, X, dropout: float = 0.0, rng=None, training: bool = False):
    """Affine layers with ReLU after every layer but the last.

    ``params`` maps ``mlp.w{k}``/``mlp.b{k}`` to arrays or Tensors.  Returns an
    array when given arrays and a taped Tensor otherwise.
    """
    depth = _mlp_depth(params)
    if depth == 0:
        raise ConfigError("mlp parameters are missing")
    taped = any(isinstance(v, Tensor) for v in params.values()) or isinstance(X, Tensor)
    h = X if taped else Tensor(X)
    if h.shape[1] != params["mlp.w0"].shape[0]:
        raise ShapeError(f"embedder expects {params['mlp.w0'].shape[0]} inputs, got {h.shape[1]}")
    for k in range(depth):
        h = ad.matmul(h, params[f"mlp.w{k}"]) + params[f"mlp.b{k}"]
        if k < depth - 1:
            h = ad.relu(h)
            h = dropout_apply(h, dropout, rng, training)
    return h if taped else h.data


# -- model --------------------------------------------------------------------

@dataclass
class NwModel:
    variant: str
    log_sigma: float = 0.0
    gamma: float = 0.0
    w: np.ndarray | None = None
    mlp: dict[str, np.ndarray] | None = None
    mlp_dropout: float = 0.0
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown NW variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    def param_values(self) -> dict[str, np.ndarray]:
        vals = {"log_sigma": np.array(self.log_sigma, float), "gamma": np.array(self.gamma, float)}
        if self.w is not None:
            vals["w"] = np.asarray(self.w, float).reshape(1, -1)
        if self.mlp is not None:
            vals.update(self.mlp)
        return vals

    def with_values(self, values: dict[str, np.ndarray]) -> "NwModel":
        mlp = {k: np.array(v) for k, v in values.items() if k.startswith("mlp.")} or None
        w = values.get("w")
        return NwModel(
            variant=self.variant,
            log_sigma=float(values["log_sigma"]),
            gamma=float(values["gamma"]),
            w=None if w is None else np.asarray(w).reshape(-1).copy(),
            mlp=mlp,
            mlp_dropout=self.mlp_dropout,
            feature_mean=self.feature_mean,
            feature_scale=self.feature_scale,
        )

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.feature_mean is None:
            return X
        return (X - self.feature_mean) / self.feature_scale


def _sqdist(a, b) -> Tensor:
    """Pairwise squared Euclidean distances between the rows of ``a`` and ``b``."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    aa = ad.square(a).sum(axis=1, keepdims=True)
    bb = ad.square(b).sum(axis=1, keepdims=True)
    return aa + bb.T - 2.0 * ad.matmul(a, b.T)


def relation_distance(rq: np.ndarray, rb: np.ndarray) -> np.ndarray:
    """Omega[s, i] = sum_p (rq[s, p] - rb[i, p])^2 over shared relation columns."""
    rq, rb = np.asarray(rq, float), np.asarray(rb, float)
    if rq.shape[1] != rb.shape[1]:
        raise ShapeError(f"relation rows cover {rq.shape[1]} and {rb.shape[1]} columns")
    omega = (rq**2).sum(1)[:, None] + (rb**2).sum(1)[None, :] - 2.0 * rq @ rb.T
    return np.maximum(omega, 0.0)


def kernel_logits(
    variant: str,
    p: dict,
    Xq: np.ndarray,
    Xb: np.ndarray,
    r_query: np.ndarray | None = None,
    omega: np.ndarray | None = None,
    dropout: float = 0.0,
    rng=None,
    training: bool = False,
) -> Tensor:
    """Unnormalised log-weights (n_q x n_b) for ``variant``.

    ``p`` maps parameter names to Tensors (or arrays for plain evaluation).
    """
    if Xq.shape[1] != Xb.shape[1]:
        raise ShapeError(f"query dimension {Xq.shape[1]} != background dimension {Xb.shape[1]}")
    n_q, n_b = Xq.shape[0], Xb.shape[0]
    if variant in ("rel_kernel", "learnable_norm", "mlp_embed"):
        if r_query is None or r_query.shape != (n_q, n_b):
            got = None if r_query is None else r_query.shape
            raise ShapeError(f"query relations must be {n_q}x{n_b}, got {got}")
    inv_sigma = ad.exp(-ad.as_tensor(p["log_sigma"]))
    if variant == "vanilla":
        return -_sqdist(Xq, Xb) * inv_sigma
    if variant == "rel_features":
        if omega is None or omega.shape != (n_q, n_b):
            raise ShapeError("rel_features needs relation rows for queries and background")
        return -(_sqdist(Xq, Xb) + omega) * inv_sigma
    rel = ad.as_tensor(p["gamma"]) * r_query
    if variant == "rel_kernel":
        return rel - _sqdist(Xq, Xb) * inv_sigma
    if variant == "learnable_norm":
        w = p.get("w")
        if w is None:
            raise ConfigError("learnable_norm needs a feature-weight vector")
        w = ad.as_tensor(w)
        if w.data.size != Xq.shape[1]:
            raise ShapeError(f"weight vector has {w.data.size} entries for {Xq.shape[1]} features")
        w = ad.reshape(w, (1, -1))
        return rel - _sqdist(ad.mul(Xq, w), ad.mul(Xb, w))
    mlp = {k: v for k, v in p.items() if k.startswith("mlp.")}
    if not mlp:
        raise ConfigError("mlp_embed needs MLP parameters")
    both = np.vstack([Xq, Xb])
    emb = mlp_embed_forward(mlp, Tensor(both), dropout, rng, training)
    return rel - _sqdist(emb[:n_q], emb[n_q:]) * inv_sigma


def _weights(logits: Tensor, exclude) -> Tensor:
    mask = None if exclude is None else ~np.asarray(exclude, dtype=bool)
    return softmax_rows(logits, mask)


def _predict(model: NwModel, variant: str, X_bg, y_bg, X_q, r_query=None, omega=None, exclude=None):
    Xb, Xq = model.transform(X_bg), model.transform(X_q)
    y_bg = np.asarray(y_bg, dtype=np.float64).reshape(-1, 1)
    if y_bg.shape[0] != Xb.shape[0]:
        raise ShapeError("background targets do not match background rows")
    if Xb.shape[0] == 0:
        raise ConfigError("background is empty")
    r = None if r_query is None else np.atleast_2d(np.asarray(r_query, dtype=np.float64))
    params = {k: Tensor(v) for k, v in model.param_values().items()}
    logits = kernel_logits(variant, params, Xq, Xb, r, omega)
    return (_weights(logits, exclude).data @ y_bg).reshape(-1)


def nw_predict_vanilla(model, X_bg, y_bg, X_q, exclude=None) -> np.ndarray:
    return _predict(model, "vanilla", X_bg, y_bg, X_q, exclude=exclude)


def nw_predict_rel(model, X_bg, y_bg, X_q, r_query, exclude=None) -> np.ndarray:
    return _predict(model, "rel_kernel", X_bg, y_bg, X_q, r_query, exclude=exclude)


def nw_predict_rel_features(model, X_bg, y_bg, R_bg, X_q, r_query, exclude=None) -> np.ndarray:
    """``R_bg`` and ``r_query`` are relation rows over the same set of columns."""
    omega = relation_distance(np.atleast_2d(r_query), np.atleast_2d(R_bg))
    return _predict(model, "rel_features", X_bg, y_bg, X_q, omega=omega, exclude=exclude)


def nw_predict_learnable_norm(model, X_bg, y_bg, X_q, r_query, exclude=None) -> np.ndarray:
    return _predict(model, "learnable_norm", X_bg, y_bg, X_q, r_query, exclude=exclude)


def nw_predict_mlp(model, X_bg, y_bg, X_q, r_query, exclude=None) -> np.ndarray:
    if model.mlp is None:
        raise ConfigError("model has no MLP parameters")
    return _predict(model, "mlp_embed", X_bg, y_bg, X_q, r_query, exclude=exclude)


def nw_predict(model: NwModel, X_bg, y_bg, X_q, r_query=None, R_bg=None, exclude=None) -> np.ndarray:
    """Dispatch on ``model.variant``.

    For ``rel_features`` ``r_query`` holds full relation rows matching ``R_bg``;
    for the other relation-aware variants it is the n_q x n_b block.
    """
    v = model.variant
    if v == "vanilla":
        return nw_predict_vanilla(model, X_bg, y_bg, X_q, exclude)
    if v == "rel_features":
        return nw_predict_rel_features(model, X_bg, y_bg, R_bg, X_q, r_query, exclude)
    if v == "rel_kernel":
        return nw_predict_rel(model, X_bg, y_bg, X_q, r_query, exclude)
    if v == "learnable_norm":
        return nw_predict_learnable_norm(model, X_bg, y_bg, X_q, r_query, exclude)
    return nw_predict_mlp(model, X_bg, y_bg, X_q, r_query, exclude)


def nw_weights(model: NwModel, X_bg, X_q, r_query=None, R_bg=None, exclude=None) -> np.ndarray:
    """Normalised kernel weights (n_q x n_b) the model assigns to background rows."""
    Xb, Xq = model.transform(X_bg), model.transform(X_q)
    omega = None
    r = r_query
    if model.variant == "rel_features":
        omega = relation_distance(np.atleast_2d(r_query), np.atleast_2d(R_bg))
        r = None
    params = {k: Tensor(v) for k, v in model.param_values().items()}
    return _weights(kernel_logits(model.variant, params, Xq, Xb, r, omega), exclude).data


# -- fitting ------------------------------------------------------------------

@dataclass
class NwFitConfig:
    epochs: int = 2000
    lr: float = 1e-2
    mlp_lr: float = 1e-3
    patience: int = 50
    min_delta: float = 1e-6
    standardize: bool = True
    mlp_hidden: tuple[int, ...] = (32, 32)
    mlp_out: int = 16
    mlp_dropout: float = 0.1
    seed: int = 0


@dataclass
class NwFitResult:
    model: NwModel
    trial_mse: float
    trial_r2: float
    validation_mse: float | None
    validation_r2: float | None
    epochs_run: int
    history: list[float] = field(default_factory=list)


@dataclass
class NwProblem:
    """Arrays for one background/trial fit, already standardised."""

    variant: str
    Xb: np.ndarray
    yb: np.ndarray
    Xt: np.ndarray
    yt: np.ndarray
    r_trial: np.ndarray | None
    omega: np.ndarray | None

    @classmethod
    def build(cls, model: NwModel, X, y, R, background, trial) -> "NwProblem":
        background, trial = np.asarray(background, int), np.asarray(trial, int)
        X = np.atleast_2d(np.asarray(X, float))
        r_trial = omega = None
        if model.variant == "rel_features":
            omega = relation_distance(R[trial], R[background])
        elif model.variant != "vanilla":
            r_trial = R[np.ix_(trial, background)]
        return cls(
            model.variant,
            model.transform(X[background]),
            np.asarray(y, float)[background].reshape(-1, 1),
            model.transform(X[trial]),
            np.asarray(y, float)[trial].reshape(-1),
            r_trial,
            omega,
        )

    def predictions(self, p: dict, dropout=0.0, rng=None, training=False) -> Tensor:
        logits = kernel_logits(self.variant, p, self.Xt, self.Xb, self.r_trial, self.omega,
                               dropout, rng, training)
        return ad.reshape(ad.matmul(softmax_rows(logits), self.yb), (-1,))

    def loss(self, p: dict, dropout=0.0, rng=None, training=False) -> Tensor:
        return ad.square(self.predictions(p, dropout, rng, training) - self.yt).mean()


def _initial_model(variant: str, d: int, config: NwFitConfig, rng) -> NwModel:
    w = np.ones(d) if variant == "learnable_norm" else None
    mlp = None
    if variant == "mlp_embed":
        mlp = init_mlp((d, *config.mlp_hidden, config.mlp_out), rng)
    return NwModel(variant, w=w, mlp=mlp, mlp_dropout=config.mlp_dropout if mlp else 0.0)


def fit_arrays(X, y, R, background, trial, variant: str, config: NwFitConfig | None = None,
               init: NwModel | None = None) -> tuple[NwModel, list[float], int]:
    """Fit ``variant`` by full-batch Adam on the trial MSE given the background."""
    config = config or NwFitConfig()
    background, trial = np.asarray(background, int), np.asarray(trial, int)
    if background.size == 0 or trial.size == 0:
        raise ConfigError("background and trial sets must both be nonempty")
    X = np.atleast_2d(np.asarray(X, float))
    rng = np.random.default_rng(config.seed)
    model = init or _initial_model(variant, X.shape[1], config, rng)
    if config.standardize and model.feature_mean is None:
        mean = X[background].mean(axis=0)
        scale = X[background].std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        model.feature_mean, model.feature_scale = mean, scale
    problem = NwProblem.build(model, X, y, R, background, trial)
    params = ParamStore(model.param_values())
    adam = AdamConfig(lr=config.lr, slot_lr={"mlp": config.mlp_lr})
    stochastic = model.mlp is not None and model.mlp_dropout > 0

    def eval_loss() -> float:
        return float(problem.loss({k: Tensor(t.data) for k, t in params.items()}).data)

    best = np.inf
    best_values = params.values_dict()
    history: list[float] = []
    stale = 0
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        snapshot = params.values_dict()
        loss = problem.loss(dict(params.items()), model.mlp_dropout, rng, training=stochastic)
        # the tracked value always belongs to ``snapshot``
        current = eval_loss() if stochastic else float(loss.data)
        if not np.isfinite(current):
            raise DivergedError(f"{variant} fit diverged at epoch {epoch}", epoch=epoch)
        history.append(current)
        if current < best - config.min_delta:
            best, best_values, stale = current, snapshot, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
        try:
            adam_step(params, grad(loss, params), adam)
        except DivergedError as exc:
            raise DivergedError(f"{variant} fit diverged at epoch {epoch}: {exc}", epoch=epoch,
                                slot=exc.slot) from exc
    else:
        final = eval_loss()
        if np.isfinite(final) and final < best:
            best, best_values = final, params.values_dict()
            history.append(final)
    logger.debug("%s fit stopped after %d epochs, trial mse %.4g", variant, epoch, best)
    return model.with_values(best_values), history, epoch


def nw_fit(dataset: RelDataset, split: SplitIndex, variant: str,
           config: NwFitConfig | None = None) -> NwFitResult:
    """Fit on ``split.trial`` given ``split.background``; score trial and validation."""
    split.validate(dataset.n)
    model, history, epochs = fit_arrays(dataset.X, dataset.y, dataset.R, split.background,
                                        split.trial, variant, config)
    pred_t = predict_rows(model, dataset, split.background, split.trial)
    val_mse = val_r2 = None
    if split.validation.size:
        pred_v = predict_rows(model, dataset, split.background, split.validation)
        val_mse = mse(dataset.y[split.validation], pred_v)
        val_r2 = r2_score(dataset.y[split.validation], pred_v)
    return NwFitResult(model, mse(dataset.y[split.trial], pred_t), r2_score(dataset.y[split.trial], pred_t),
                       val_mse, val_r2, epochs, history)


def predict_rows(model: NwModel, dataset: RelDataset, background, rows) -> np.ndarray:
    """Predict dataset rows ``rows`` from background rows, using in-dataset relations."""
    background, rows = np.asarray(background, int), np.asarray(rows, int)
    exclude = rows[:, None] == background[None, :]
    if not exclude.any():
        exclude = None
    if model.variant == "rel_features":
        return nw_predict_rel_features(model, dataset.X[background], dataset.y[background],
                                       dataset.R[background], dataset.X[rows], dataset.R[rows], exclude)
    r = dataset.R[np.ix_(rows, background)]
    return nw_predict(model, dataset.X[background], dataset.y[background], dataset.X[rows], r,
                      exclude=exclude)
