"""Dataset containers shared across estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError


def _check_relations(R: np.ndarray, n: int) -> None:
    if R.shape != (n, n):
        raise ShapeError(f"relation matrix must be {n}x{n}, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise DataError("relation matrix has non-finite entries")
    if np.any(R < 0):
        raise DataError("relation matrix must be nonnegative")
    if not np.allclose(R, R.T, rtol=0.0, atol=1e-12):
        raise DataError("relation matrix is not symmetric")


@dataclass(frozen=True)
class RelDataset:
    """Features ``X`` (n x d), targets ``y`` (n,) and relations ``R`` (n x n).

    The diagonal of ``R`` is never read by any estimator.
    """

    X: np.ndarray
    y: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        R = np.asarray(self.R, dtype=np.float64)
        n = X.shape[0]
        if n < 1:
            raise DataError("dataset needs at least one row")
        if y.shape[0] != n:
            raise ShapeError(f"X has {n} rows but y has {y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("features and targets must be finite")
        _check_relations(R, n)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "R", R)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "RelDataset":
        rows = np.asarray(rows, dtype=int)
        return RelDataset(self.X[rows], self.y[rows], self.R[np.ix_(rows, rows)])


@dataclass(frozen=True)
class SplitIndex:
    background: np.ndarray
    trial: np.ndarray
    validation: np.ndarray

    def __post_init__(self):
        for name in ("background", "trial", "validation"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=int).reshape(-1))
        if self.background.size == 0:
            raise ConfigError("background set is empty")
        parts = np.concatenate([self.background, self.trial, self.validation])
        if np.unique(parts).size != parts.size:
            raise ConfigError("split parts overlap or repeat an index")

    def validate(self, n: int) -> None:
        parts = np.concatenate([self.background, self.trial, self.validation])
        if parts.size and (parts.min() < 0 or parts.max() >= n):
            raise ConfigError(f"split index out of range for {n} rows")


@dataclass(frozen=True)
class TreatmentDataset:
    """Observational data: features, binary treatment, factual outcome, relations."""

    X: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    R: np.ndarray
    tau_true: np.ndarray | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        n = X.shape[0]
        W = np.asarray(self.W).reshape(-1)
        if W.shape[0] != n or not np.all(np.isin(W, (0, 1))):
            raise DataError("treatment indicator must be a 0/1 vector with one entry per row")
        W = W.astype(int)
        if W.sum() == 0 or W.sum() == n:
            raise ConfigError("both treated and control groups must be nonempty")
        Y = np.asarray(self.Y, dtype=np.float64).reshape(-1)
        if Y.shape[0] != n:
            raise ShapeError("outcome length does not match X")
        R = np.asarray(self.R, dtype=np.float64)
        _check_relations(R, n)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "R", R)
        if self.tau_true is not None:
            tau = np.asarray(self.tau_true, dtype=np.float64).reshape(-1)
            if tau.shape[0] != n:
                raise ShapeError("tau_true length does not match X")
            object.__setattr__(self, "tau_true", tau)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def permuted(self, order) -> "TreatmentDataset":
        order = np.asarray(order, dtype=int)
        tau = None if self.tau_true is None else self.tau_true[order]
        return TreatmentDataset(self.X[order], self.W[order], self.Y[order],
                                self.R[np.ix_(order, order)], tau)
