"""TabRel: a transformer over samples with relation-biased attention.

Each row of the input holds one sample's features followed by its target;
targets of trial and validation rows are zeroed.  Rows are laid out
background first, so the masked key columns are always the trailing ones.
Every encoder layer computes, per head ``h``,

    softmax(Q_h K_h^T / sqrt(hd) + s_h R, masked) V_h

and adds the projected result back onto its input.
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


@dataclass(frozen=True)
class TabRelConfig:
    embed_dim: int = 32
    num_heads: int = 4
    depth: int = 2
    dropout: float = 0.1
    feature_embed: int = 8
    layer_norm: bool = False
    feed_forward: bool = False
    # "all_rows": no row attends a trial/validation column;
    # "trial_rows": only trial/validation rows are blocked from those columns
    mask_scope: str = "all_rows"

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("TabRel needs at least one encoder layer")
        if self.num_heads < 1 or self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.mask_scope not in ("all_rows", "trial_rows"):
            raise ConfigError(f"unknown mask_scope {self.mask_scope!r}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


@dataclass(frozen=True)
class AttentionBatch:
    """One transductive batch: ``rows`` are dataset indices in batch order."""

    X_in: np.ndarray
    R: np.ndarray
    trial_mask: np.ndarray
    rows: np.ndarray
    n_background: int

    @property
    def ns(self) -> int:
        return self.X_in.shape[0]

    @property
    def n_masked(self) -> int:
        return self.ns - self.n_background


@dataclass(frozen=True)
class Standardizer:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d), 0.0, 1.0)

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray) -> "Standardizer":
        xs = X.std(axis=0)
        ys = float(y.std())
        return cls(X.mean(axis=0), np.where(xs > 0, xs, 1.0), float(y.mean()), ys if ys > 0 else 1.0)


def _order(split: SplitIndex, role: str) -> tuple[np.ndarray, int]:
    if role not in ("trial", "validation"):
        raise ConfigError(f"role must be 'trial' or 'validation', got {role!r}")
    parts = [np.sort(split.background), np.sort(split.trial)]
    if role == "validation":
        parts.append(np.sort(split.validation))
    return np.concatenate(parts), split.background.size


def build_rows(X, y, R, background, queries, scaler: Standardizer | None = None) -> AttentionBatch:
    """Batch of ``background`` rows (targets visible) then ``queries`` (targets zeroed)."""
    background, queries = np.asarray(background, int), np.asarray(queries, int)
    if background.size == 0:
        raise ConfigError("background set is empty")
    X = np.atleast_2d(np.asarray(X, float))
    scaler = scaler or Standardizer.identity(X.shape[1])
    rows = np.concatenate([background, queries])
    feats = (X[rows] - scaler.x_mean) / scaler.x_scale
    target = np.zeros(rows.size)
    target[: background.size] = (np.asarray(y, float)[background] - scaler.y_mean) / scaler.y_scale
    masked = np.zeros(rows.size, dtype=bool)
    masked[background.size:] = True
    Rb = np.asarray(R, float)[np.ix_(rows, rows)].copy()
    np.fill_diagonal(Rb, 0.0)
    return AttentionBatch(np.column_stack([feats, target]), Rb, masked, rows, background.size)


def build_input_matrix(dataset: RelDataset, split: SplitIndex, role: str = "validation",
                       scaler: Standardizer | None = None) -> AttentionBatch:
    """Background rows, then trial rows, then (for ``role="validation"``) validation rows."""
    split.validate(dataset.n)
    rows, n_bg = _order(split, role)
    return build_rows(dataset.X, dataset.y, dataset.R, rows[:n_bg], rows[n_bg:], scaler)


def build_trial_mask(ns: int, n_trial: int, scope: str = "all_rows") -> np.ndarray:
    """Boolean ns x ns matrix; True marks key columns a query row may attend."""
    if not 0 <= n_trial < ns:
        raise ConfigError(f"cannot mask {n_trial} trailing columns of {ns}: no key would remain")
    mask = np.ones((ns, ns), dtype=bool)
    if n_trial == 0:
        return mask
    if scope == "all_rows":
        mask[:, ns - n_trial:] = False
    else:
        mask[ns - n_trial:, ns - n_trial:] = False
        idx = np.arange(ns - n_trial, ns)
        mask[idx, idx] = True
    return mask


def build_rel_bias(R: np.ndarray, s) -> list[np.ndarray]:
    """Per-head additive score bias ``s[h] * R``."""
    R = np.asarray(R, float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ShapeError(f"relation matrix must be square, got {R.shape}")
    return [float(sh) * R for sh in np.asarray(s, float).reshape(-1)]


# -- parameters ---------------------------------------------------------------

def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(n_inputs: int, config: TabRelConfig, rng: np.random.Generator) -> ParamStore:
    """Fresh parameters; relation scales and the output head start at zero."""
    e, ed = config.feature_embed, config.embed_dim
    p = ParamStore()
    p.add("embed.w", rng.normal(0.0, 1.0, size=(1, n_inputs * e)))
    p.add("embed.b", rng.normal(0.0, 0.1, size=(1, n_inputs * e)))
    p.add("proj.w", _glorot(rng, n_inputs * e, ed))
    p.add("proj.b", np.zeros((1, ed)))
    for layer in range(config.depth):
        pre = f"layer{layer}"
        for name in ("wq", "wk", "wv", "wo"):
            p.add(f"{pre}.{name}", _glorot(rng, ed, ed))
        p.add(f"{pre}.bo", np.zeros((1, ed)))
        p.add(f"{pre}.s", np.zeros(config.num_heads))
        if config.feed_forward:
            p.add(f"{pre}.ff1.w", _glorot(rng, ed, 2 * ed))
            p.add(f"{pre}.ff1.b", np.zeros((1, 2 * ed)))
            p.add(f"{pre}.ff2.w", _glorot(rng, 2 * ed, ed))
            p.add(f"{pre}.ff2.b", np.zeros((1, ed)))
        if config.layer_norm:
            p.add(f"{pre}.ln.g", np.ones((1, ed)))
            p.add(f"{pre}.ln.b", np.zeros((1, ed)))
    p.add("head.w", np.zeros((ed, 1)))
    p.add("head.b", np.zeros((1, 1)))
    return p


def _as_tensors(params) -> dict[str, Tensor]:
    if isinstance(params, ParamStore):
        return dict(params.items())
    return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}


def num_embed(params, X_in) -> Tensor:
    """Per-column affine map + ReLU, concatenated and projected to ``embed_dim``."""
    p = _as_tensors(params)
    X_in = np.asarray(X_in, float)
    width = p["embed.w"].shape[1]
    if width % X_in.shape[1]:
        raise ShapeError(f"embedding width {width} does not fit {X_in.shape[1]} input columns")
    e = width // X_in.shape[1]
    rep = np.repeat(X_in, e, axis=1)
    z = ad.relu(rep * p["embed.w"] + p["embed.b"])
    return ad.matmul(z, p["proj.w"]) + p["proj.b"]


def _layer_norm(h: Tensor, g, b, eps=1e-5) -> Tensor:
    mu = h.mean(axis=1, keepdims=True)
    centred = h - mu
    var = ad.square(centred).mean(axis=1, keepdims=True)
    return centred / ad.exp(0.5 * ad.log(var + eps)) * g + b


def rmha_forward(layer: dict, H: Tensor, R: np.ndarray, mask: np.ndarray, num_heads: int,
                 dropout: float = 0.0, rng=None, training: bool = False,
                 attention_out: list | None = None) -> Tensor:
    """One relational multi-head attention block with residual connection.

    ``layer`` maps ``wq, wk, wv, wo, bo, s`` to Tensors.  If ``attention_out``
    is a list, the per-head attention weights are appended to it.
    """
    H = ad.as_tensor(H)
    ns, ed = H.shape
    if R.shape != (ns, ns) or mask.shape != (ns, ns):
        raise ShapeError(f"relations {R.shape} and mask {mask.shape} must be {ns}x{ns}")
    hd = ed // num_heads
    Q = ad.matmul(H, layer["wq"])
    K = ad.matmul(H, layer["wk"])
    V = ad.matmul(H, layer["wv"])
    # column-only masks (the default scope) are applied by dropping the blocked keys
    open_cols = mask.all(axis=0)
    keys = None
    if np.array_equal(mask, np.broadcast_to(open_cols, mask.shape)) and not open_cols.all():
        keys = np.flatnonzero(open_cols)
        if keys.size == 0:
            raise ConfigError("mask leaves no key column")
        if np.array_equal(keys, np.arange(keys.size)):
            keys = slice(0, keys.size)
        K, V, R_keys, sub_mask = K[keys], V[keys], R[:, keys], None
    else:
        R_keys, sub_mask = R, mask
    scale = 1.0 / np.sqrt(hd)
    s = layer["s"]
    heads = []
    for h in range(num_heads):
        cols = slice(h * hd, (h + 1) * hd)
        scores = ad.matmul(Q[:, cols], K[:, cols].T) * scale + s[h] * R_keys
        if not np.all(np.isfinite(scores.data)):
            raise DivergedError("attention scores are not finite")
        alpha = softmax_rows(scores, sub_mask)
        if attention_out is not None:
            full = np.zeros((ns, ns))
            full[:, keys if keys is not None else slice(None)] = alpha.data
            attention_out.append(full)
        alpha = dropout_apply(alpha, dropout, rng, training)
        heads.append(ad.matmul(alpha, V[:, cols]))
    out = ad.matmul(ad.concat(heads, axis=1), layer["wo"]) + layer["bo"]
    return H + out


def _layer_params(p: dict, layer: int) -> dict:
    pre = f"layer{layer}."
    return {k[len(pre):]: v for k, v in p.items() if k.startswith(pre)}


def tabrel_forward(params, batch: AttentionBatch, config: TabRelConfig, training: bool = False,
                   rng: np.random.Generator | None = None, attention_out: list | None = None) -> Tensor:
    """Predictions (standardised scale) for every row of ``batch``."""
    p = _as_tensors(params)
    if batch.X_in.shape[1] * config.feature_embed != p["embed.w"].shape[1]:
        raise ShapeError("batch column count does not match the parameters")
    mask = build_trial_mask(batch.ns, batch.n_masked, config.mask_scope)
    H = num_embed(p, batch.X_in)
    for layer in range(config.depth):
        lp = _layer_params(p, layer)
        H = dropout_apply(H, config.dropout, rng, training)
        H = rmha_forward(lp, H, batch.R, mask, config.num_heads, config.dropout, rng, training,
                         attention_out)
        if config.feed_forward:
            ff = ad.relu(ad.matmul(H, lp["ff1.w"]) + lp["ff1.b"])
            H = H + ad.matmul(ff, lp["ff2.w"]) + lp["ff2.b"]
        if config.layer_norm:
            H = _layer_norm(H, lp["ln.g"], lp["ln.b"])
    out = ad.matmul(H, p["head.w"]) + p["head.b"]
    return ad.reshape(out, (-1,))


# -- fitting ------------------------------------------------------------------

@dataclass
class TabRelFitConfig:
    epochs: int = 2000
    lr: float = 1e-3
    # relation scales must grow to O(1) quickly; None falls back to ``lr``
    relation_lr: float | None = 1e-2
    patience: int = 200
    min_delta: float = 1e-6
    # dropout makes the training loss noisy; the eval-mode loss used for
    # early stopping is recomputed every ``eval_every`` epochs
    eval_every: int = 10
    standardize: bool = True
    seed: int = 0


@dataclass
class TabRelModel:
    """Fitted parameters plus the scaling learned from the background."""

    params: dict[str, np.ndarray]
    config: TabRelConfig
    scaler: Standardizer

    def predict(self, X, y, R, background, queries) -> np.ndarray:
        """Predict ``queries`` rows attending to ``background`` rows (original scale)."""
        batch = build_rows(X, y, R, background, queries, self.scaler)
        out = tabrel_forward(self.params, batch, self.config).data
        return out[batch.n_background:] * self.scaler.y_scale + self.scaler.y_mean


@dataclass
class TabRelFitResult:
    model: TabRelModel
    trial_mse: float
    trial_r2: float
    validation_mse: float | None
    validation_r2: float | None
    epochs_run: int
    history: list[float] = field(default_factory=list)


def fit_arrays(X, y, R, background, trial, config: TabRelConfig | None = None,
               fit_config: TabRelFitConfig | None = None, extra=None) -> tuple[TabRelModel, list[float], int]:
    """Minimise trial MSE.  ``extra`` rows ride along masked, like validation rows."""
    config = config or TabRelConfig()
    fc = fit_config or TabRelFitConfig()
    background, trial = np.asarray(background, int), np.asarray(trial, int)
    if background.size == 0 or trial.size == 0:
        raise ConfigError("background and trial sets must both be nonempty")
    extra = np.zeros(0, int) if extra is None else np.asarray(extra, int)
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float)
    scaler = Standardizer.fit(X[background], y[background]) if fc.standardize else Standardizer.identity(X.shape[1])
    batch = build_rows(X, y, R, background, np.concatenate([trial, extra]), scaler)
    loss_rows = np.arange(background.size, background.size + trial.size)
    target = (y[trial] - scaler.y_mean) / scaler.y_scale

    rng = np.random.default_rng(fc.seed)
    params = init_params(batch.X_in.shape[1], config, rng)
    slot_lr = {}
    if fc.relation_lr is not None:
        slot_lr = {f"layer{k}.s": fc.relation_lr for k in range(config.depth)}
    adam = AdamConfig(lr=fc.lr, slot_lr=slot_lr)
    stochastic = config.dropout > 0

    def trial_loss(p, training):
        pred = tabrel_forward(p, batch, config, training, rng)
        return ad.square(pred[loss_rows] - target).mean()

    best, best_values, since_best, epoch = np.inf, params.values_dict(), 0, 0
    history: list[float] = []
    every = max(1, fc.eval_every) if stochastic else 1
    for epoch in range(1, fc.epochs + 1):
        check = (epoch - 1) % every == 0
        snapshot = params.values_dict() if check else None
        loss = trial_loss(params, stochastic)
        if check:
            current = float(trial_loss(snapshot, False).data) if stochastic else float(loss.data)
            if not np.isfinite(current):
                raise DivergedError(f"TabRel fit diverged at epoch {epoch}", epoch=epoch)
            history.append(current)
            if current < best - fc.min_delta:
                best, best_values, since_best = current, snapshot, 0
        if since_best >= fc.patience:
            break
        since_best += 1
        try:
            adam_step(params, grad(loss, params), adam)
        except DivergedError as exc:
            raise DivergedError(f"TabRel fit diverged at epoch {epoch}: {exc}", epoch=epoch,
                                slot=exc.slot) from exc
    logger.debug("TabRel fit stopped after %d epochs, trial mse %.4g", epoch, best)
    return TabRelModel(best_values, config, scaler), history, epoch


def tabrel_fit(dataset: RelDataset, split: SplitIndex, config: TabRelConfig | None = None,
               fit_config: TabRelFitConfig | None = None) -> TabRelFitResult:
    """Transductive fit: validation rows sit in the batch, masked like trial rows."""
    split.validate(dataset.n)
    bg, tr, va = np.sort(split.background), np.sort(split.trial), np.sort(split.validation)
    model, history, epochs = fit_arrays(dataset.X, dataset.y, dataset.R, bg, tr, config, fit_config, extra=va)
    pred = model.predict(dataset.X, dataset.y, dataset.R, bg, np.concatenate([tr, va]))
    pt, pv = pred[: tr.size], pred[tr.size:]
    val_mse = val_r2 = None
    if va.size:
        val_mse, val_r2 = mse(dataset.y[va], pv), r2_score(dataset.y[va], pv)
    return TabRelFitResult(model, mse(dataset.y[tr], pt), r2_score(dataset.y[tr], pt), val_mse, val_r2,
                           epochs, history)
