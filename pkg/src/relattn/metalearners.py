"""S-, T- and X-learners over the regressors in this package.

A base regressor is fitted on a *frame*: arrays ``X``, ``y`` and ``R`` plus the
background and trial rows of that frame.  Queries are passed as features
together with their relation rows against the same frame; ``query_rows``
names the frame row a query stands for (``-1`` for none) so that a row never
sees its own target at prediction time.

The T- and X-learners fit each outcome model on a subgroup frame built with
:func:`restrict_relations`, so query relation rows are cut down to that
subgroup's columns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import nw, tabrel
from .data import SplitIndex, TreatmentDataset
from .errors import ConfigError, DataError, ShapeError

logger = logging.getLogger(__name__)

LEARNERS = ("S", "T", "X")
MIN_GROUP_ROWS = 1


class Regressor(Protocol):
    def fit(self, X, y, R, background, trial) -> "Regressor": ...

    def predict(self, Xq, Rq, query_rows=None) -> np.ndarray: ...


def _query_rows(query_rows, nq: int) -> np.ndarray:
    if query_rows is None:
        return np.full(nq, -1)
    q = np.asarray(query_rows, int).reshape(-1)
    if q.shape[0] != nq:
        raise ShapeError("query_rows must have one entry per query")
    return q


class NwRegressor:
    """Nadaraya-Watson base regressor; queries never weight their own frame row."""

    def __init__(self, variant: str = "rel_kernel", config: nw.NwFitConfig | None = None):
        if variant not in nw.VARIANTS:
            raise ConfigError(f"unknown NW variant {variant!r}")
        self.variant = variant
        self.config = config or nw.NwFitConfig()
        self.model: nw.NwModel | None = None

    def fit(self, X, y, R, background, trial) -> "NwRegressor":
        X = np.atleast_2d(np.asarray(X, float))
        self.model, _, _ = nw.fit_arrays(X, y, R, background, trial, self.variant, self.config)
        self._bg = np.asarray(background, int)
        self._Xb, self._yb = X[self._bg], np.asarray(y, float)[self._bg]
        self._Rb = np.asarray(R, float)[self._bg]
        return self

    def predict(self, Xq, Rq, query_rows=None) -> np.ndarray:
        if self.model is None:
            raise ConfigError("predict() before fit()")
        Xq = np.atleast_2d(np.asarray(Xq, float))
        Rq = np.atleast_2d(np.asarray(Rq, float))
        q = _query_rows(query_rows, Xq.shape[0])
        exclude = q[:, None] == self._bg[None, :]
        exclude = exclude if exclude.any() else None
        if self.variant == "rel_features":
            return nw.nw_predict_rel_features(self.model, self._Xb, self._yb, self._Rb, Xq, Rq, exclude)
        return nw.nw_predict(self.model, self._Xb, self._yb, Xq, Rq[:, self._bg], exclude=exclude)


class TabRelRegressor:
    """TabRel base regressor.

    A query that is itself a background row would see its own target, so such
    queries are predicted in ``folds`` groups, each with its group's rows
    removed from the background.
    """

    def __init__(self, config: tabrel.TabRelConfig | None = None,
                 fit_config: tabrel.TabRelFitConfig | None = None, folds: int = 5):
        self.config = config or tabrel.TabRelConfig()
        self.fit_config = fit_config or tabrel.TabRelFitConfig()
        self.folds = folds
        self.model: tabrel.TabRelModel | None = None

    def fit(self, X, y, R, background, trial) -> "TabRelRegressor":
        X = np.atleast_2d(np.asarray(X, float))
        self.model, _, _ = tabrel.fit_arrays(X, y, R, background, trial, self.config, self.fit_config)
        self._bg = np.asarray(background, int)
        self._Xb, self._yb = X[self._bg], np.asarray(y, float)[self._bg]
        self._Rbb = np.asarray(R, float)[np.ix_(self._bg, self._bg)]
        return self

    def _predict_block(self, keep: np.ndarray, Xq, Rq_b, Rqq) -> np.ndarray:
        nb, nq = int(keep.sum()), Xq.shape[0]
        X = np.vstack([self._Xb[keep], Xq])
        y = np.concatenate([self._yb[keep], np.zeros(nq)])
        R = np.zeros((nb + nq, nb + nq))
        R[:nb, :nb] = self._Rbb[np.ix_(keep, keep)]
        R[nb:, :nb] = Rq_b[:, keep]
        R[:nb, nb:] = Rq_b[:, keep].T
        R[nb:, nb:] = Rqq
        return self.model.predict(X, y, R, np.arange(nb), np.arange(nb, nb + nq))

    def predict(self, Xq, Rq, query_rows=None) -> np.ndarray:
        if self.model is None:
            raise ConfigError("predict() before fit()")
        Xq = np.atleast_2d(np.asarray(Xq, float))
        Rq = np.atleast_2d(np.asarray(Rq, float))
        q = _query_rows(query_rows, Xq.shape[0])
        Rq_b = Rq[:, self._bg]
        # relations among the queries, when they are frame rows
        known = q >= 0
        Rqq = np.zeros((q.size, q.size))
        Rqq[:, known] = Rq[:, q[known]]
        Rqq = Rqq * known[:, None]
        np.fill_diagonal(Rqq, 0.0)

        pos = {int(r): k for k, r in enumerate(self._bg)}
        bg_pos = np.array([pos.get(int(r), -1) for r in q])
        fold = np.full(q.size, -1)
        inside = bg_pos >= 0
        fold[inside] = bg_pos[inside] % self.folds
        out = np.empty(q.size)
        for f in np.unique(fold):
            sel = np.flatnonzero(fold == f)
            keep = np.ones(self._bg.size, bool)
            if f >= 0:
                keep[np.arange(self._bg.size) % self.folds == f] = False
            if not keep.any():
                raise ConfigError("background too small to exclude query rows")
            out[sel] = self._predict_block(keep, Xq[sel], Rq_b[sel], Rqq[np.ix_(sel, sel)])
        return out


class RegressorFactory(Protocol):
    tag: str

    def make(self) -> Regressor: ...


@dataclass(frozen=True)
class BaseSpec:
    """Recipe for a fresh base regressor: ``kind`` is "nw" or "tabrel"."""

    kind: str = "nw"
    variant: str = "rel_kernel"
    nw_config: nw.NwFitConfig = field(default_factory=nw.NwFitConfig)
    tabrel_config: tabrel.TabRelConfig = field(default_factory=tabrel.TabRelConfig)
    tabrel_fit: tabrel.TabRelFitConfig = field(default_factory=tabrel.TabRelFitConfig)

    def __post_init__(self):
        if self.kind not in ("nw", "tabrel"):
            raise ConfigError(f"unknown base regressor kind {self.kind!r}")
        if self.kind == "nw" and self.variant not in nw.VARIANTS:
            raise ConfigError(f"unknown NW variant {self.variant!r}")

    @property
    def tag(self) -> str:
        return f"nw:{self.variant}" if self.kind == "nw" else "tabrel"

    def make(self) -> Regressor:
        if self.kind == "nw":
            return NwRegressor(self.variant, self.nw_config)
        return TabRelRegressor(self.tabrel_config, self.tabrel_fit)


@dataclass(frozen=True)
class CateEstimate:
    """Estimated effects for every dataset row, in dataset order."""

    tau_hat: np.ndarray
    learner: str
    base: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.tau_hat)):
            raise DataError("CATE estimate contains non-finite values")


def pehe(tau_hat, tau_true) -> float:
    """Mean squared difference between estimated and true effects (no root)."""
    a = np.asarray(tau_hat, float).reshape(-1)
    b = np.asarray(tau_true, float).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.size == 0:
        raise ShapeError("pehe of empty vectors")
    return float(np.mean((a - b) ** 2))


def pehe_report(estimate: CateEstimate, data: TreatmentDataset, split: SplitIndex) -> dict[str, float]:
    """PEHE on the fitting rows (in-sample) and on validation rows (out-of-sample)."""
    if data.tau_true is None:
        raise ConfigError("pehe needs tau_true")
    fitted = np.concatenate([split.background, split.trial])
    out = {"pehe_in": pehe(estimate.tau_hat[fitted], data.tau_true[fitted])}
    if split.validation.size:
        out["pehe_out"] = pehe(estimate.tau_hat[split.validation], data.tau_true[split.validation])
    return out


def restrict_relations(R, rows) -> np.ndarray:
    """Principal submatrix ``R[rows, rows]``."""
    R = np.asarray(R, float)
    rows = np.asarray(rows, int).reshape(-1)
    if rows.size and (rows.min() < 0 or rows.max() >= R.shape[0]):
        raise IndexError(f"row index out of range for a {R.shape[0]}x{R.shape[0]} matrix")
    return R[np.ix_(rows, rows)]


def same_category_relations(categories) -> np.ndarray:
    c = np.asarray(categories).reshape(-1)
    R = (c[:, None] == c[None, :]).astype(float)
    np.fill_diagonal(R, 0.0)
    return R


def build_ihdp_rel(table, column: str = "x4") -> TreatmentDataset:
    """Drop the categorical covariate ``column`` and relate rows sharing its value.

    ``table`` is an :class:`~relattn.data_io.IhdpTable` (or anything with
    ``covariates``, ``names``, ``treatment``, ``y_factual``, ``mu0``, ``mu1``).
    """
    names = list(table.names)
    if column not in names:
        raise DataError(f"column {column!r} not found among covariates")
    j = names.index(column)
    cat = np.asarray(table.covariates)[:, j]
    if np.unique(cat).size < 2:
        raise DataError(f"column {column!r} needs at least two categories")
    X = np.delete(np.asarray(table.covariates, float), j, axis=1)
    tau = np.asarray(table.mu1, float) - np.asarray(table.mu0, float)
    return TreatmentDataset(X, table.treatment, table.y_factual, same_category_relations(cat), tau)


# -- learners -------------------------------------------------------------------

def _groups(data: TreatmentDataset, split: SplitIndex) -> dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per treatment arm: (frame rows, background positions, trial positions)."""
    out = {}
    for w in (0, 1):
        members = np.flatnonzero(data.W == w)
        bg = np.flatnonzero(np.isin(members, split.background))
        tr = np.flatnonzero(np.isin(members, split.trial))
        if bg.size < MIN_GROUP_ROWS or tr.size < MIN_GROUP_ROWS:
            arm = "treated" if w else "control"
            raise ConfigError(f"{arm} group too small: {bg.size} background and {tr.size} trial rows")
        out[w] = (members, bg, tr)
    return out


def _frame_positions(members: np.ndarray, n: int) -> np.ndarray:
    """Map dataset rows to positions inside ``members`` (-1 outside)."""
    pos = np.full(n, -1)
    pos[members] = np.arange(members.size)
    return pos


def _fit_arm(spec: RegressorFactory, data: TreatmentDataset, arm, target) -> tuple[Regressor, np.ndarray]:
    members, bg, tr = arm
    model = spec.make().fit(data.X[members], target, restrict_relations(data.R, members), bg, tr)
    return model, _frame_positions(members, data.n)


def _predict_all(model: Regressor, data: TreatmentDataset, members: np.ndarray, pos: np.ndarray,
                 X=None) -> np.ndarray:
    X = data.X if X is None else X
    return model.predict(X, data.R[:, members], pos)


def s_learner(data: TreatmentDataset, split: SplitIndex, spec: RegressorFactory | None = None) -> CateEstimate:
    """One model on ``[X | W]``; effect = prediction at W=1 minus W=0."""
    spec = spec or BaseSpec()
    split.validate(data.n)
    _groups(data, split)
    XW = np.column_stack([data.X, data.W.astype(float)])
    model = spec.make().fit(XW, data.Y, data.R, split.background, split.trial)
    rows = np.arange(data.n)
    x1 = np.column_stack([data.X, np.ones(data.n)])
    x0 = np.column_stack([data.X, np.zeros(data.n)])
    tau = model.predict(x1, data.R, rows) - model.predict(x0, data.R, rows)
    return CateEstimate(tau, "S", spec.tag)


def _outcome_models(data, split, spec):
    arms = _groups(data, split)
    fitted = {}
    for w, arm in arms.items():
        members = arm[0]
        model, pos = _fit_arm(spec, data, arm, data.Y[members])
        fitted[w] = (model, members, pos)
    return arms, fitted


def t_learner(data: TreatmentDataset, split: SplitIndex, spec: RegressorFactory | None = None) -> CateEstimate:
    """Separate outcome models per arm; effect = mu1(x) - mu0(x)."""
    spec = spec or BaseSpec()
    split.validate(data.n)
    _, fitted = _outcome_models(data, split, spec)
    mu = {w: _predict_all(m, data, members, pos) for w, (m, members, pos) in fitted.items()}
    return CateEstimate(mu[1] - mu[0], "T", spec.tag)


def x_learner(data: TreatmentDataset, split: SplitIndex, spec: RegressorFactory | None = None) -> CateEstimate:
    """Impute individual effects with the other arm's model, regress them, average with weight 1/2."""
    spec = spec or BaseSpec()
    split.validate(data.n)
    arms, fitted = _outcome_models(data, split, spec)
    treated, control = arms[1][0], arms[0][0]
    m0, mem0, pos0 = fitted[0]
    m1, mem1, pos1 = fitted[1]
    d1 = data.Y[treated] - m0.predict(data.X[treated], data.R[np.ix_(treated, mem0)], pos0[treated])
    d0 = m1.predict(data.X[control], data.R[np.ix_(control, mem1)], pos1[control]) - data.Y[control]
    tau1, p1 = _fit_arm(spec, data, arms[1], d1)
    tau0, p0 = _fit_arm(spec, data, arms[0], d0)
    tau = 0.5 * (_predict_all(tau0, data, control, p0) + _predict_all(tau1, data, treated, p1))
    return CateEstimate(tau, "X", spec.tag)


def run_learner(kind: str, data: TreatmentDataset, split: SplitIndex,
                spec: RegressorFactory | None = None) -> CateEstimate:
    fns = {"S": s_learner, "T": t_learner, "X": x_learner}
    if kind not in fns:
        raise ConfigError(f"unknown learner {kind!r}; expected one of {LEARNERS}")
    return fns[kind](data, split, spec)
