"""Loading real tables and relation graphs, plus the relation informativeness test.

Tables are delimiter-separated text with a header row.  Relations come from a
pair list (two keys per line) or from a taxonomy table (key plus one column
per taxonomic level).  Rows whose selected cells are empty are dropped and
counted; any other unparsable cell is an error naming its line and column.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import kolmogorov

from .data import SplitIndex
from .errors import ConfigError, DataError, DiagnosticUndefinedError

logger = logging.getLogger(__name__)

MISSING = frozenset({"", "na", "nan", "null", "none", "?"})
TAXONOMY_LEVELS = ("order", "family", "genus")
DATA_ROOT_ENV = "RELATTN_DATA"


def data_root() -> Path:
    """Dataset root directory from the environment (defaults to ``./data``)."""
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


def resolve(path) -> Path:
    p = Path(path)
    return p if p.is_absolute() or p.exists() else data_root() / p


@dataclass(frozen=True)
class TableSource:
    path: str
    features: tuple[str, ...]
    target: str
    key: str
    delimiter: str = ","
    year_column: str | None = None
    year: float | None = None


@dataclass
class KeyedTable:
    keys: list[str]
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    target_name: str
    n_read: int
    n_dropped: int
    years: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.keys)


def _read_rows(path: Path, delimiter: str) -> tuple[list[str], list[tuple[int, list[str]]]]:
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            reader = csv.reader(fh, delimiter=delimiter)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty file")
            rows = [(reader.line_num, r) for r in reader if any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return [h.strip() for h in header], rows


def _column(header: list[str], name: str, path) -> int:
    try:
        return header.index(name)
    except ValueError:
        raise DataError(f"{path}: missing column {name!r}") from None


def _number(cell: str, line: int, col: str, path) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"{path}: unparsable value {cell!r} at line {line}, column {col!r}") from None


def load_table(source: TableSource) -> KeyedTable:
    """Read ``source`` into numeric arrays keyed by ``source.key``."""
    path = resolve(source.path)
    header, rows = _read_rows(path, source.delimiter)
    if not rows:
        raise DataError(f"{path}: table has a header but no rows")
    key_col = _column(header, source.key, path)
    cols = [_column(header, c, path) for c in (*source.features, source.target)]
    year_col = _column(header, source.year_column, path) if source.year_column else None

    keys, values, years = [], [], []
    dropped = 0
    for line, row in rows:
        if len(row) < len(header):
            raise DataError(f"{path}: line {line} has {len(row)} cells, header has {len(header)}")
        year = None
        if year_col is not None:
            year = _number(row[year_col], line, source.year_column, path)
            if source.year is not None and year != source.year:
                continue
        cells = [row[c].strip() for c in cols]
        if any(c.lower() in MISSING for c in cells):
            dropped += 1
            continue
        values.append([_number(c, line, header[j], path) for c, j in zip(cells, cols)])
        keys.append(row[key_col].strip())
        years.append(year)
    if not values:
        raise DataError(f"{path}: no complete rows left after dropping {dropped}")
    arr = np.asarray(values, dtype=np.float64)
    logger.info("loaded %s: %d rows kept, %d dropped", path, len(keys), dropped)
    return KeyedTable(keys, arr[:, :-1], arr[:, -1], tuple(source.features), source.target,
                      len(keys) + dropped, dropped,
                      np.asarray(years, float) if year_col is not None else None)


# -- relations -------------------------------------------------------------------

def load_pair_list(path, delimiter: str | None = None) -> list[tuple[str, str]]:
    """Two keys per line; blank lines and ``#`` comments are skipped."""
    pairs = []
    with open(resolve(path), encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in (line.split(delimiter) if delimiter else
                                         line.split("\t") if "\t" in line else line.split(","))]
            if len(parts) != 2 or not all(parts):
                raise DataError(f"{path}: line {line_no} is not a key pair")
            pairs.append((parts[0], parts[1]))
    return pairs


def _positions(keys: Sequence[str]) -> dict[str, list[int]]:
    pos: dict[str, list[int]] = {}
    for i, k in enumerate(keys):
        pos.setdefault(k, []).append(i)
    return pos


def build_pair_relations(keys: Sequence[str], pairs: Iterable[tuple[str, str]]) -> np.ndarray:
    """``r_ij = 1`` when rows i and j carry a listed pair of keys.

    A key may label several rows (one per year, say); every row of one key is
    related to every row of the other.  Pairs with unknown keys are skipped.
    """
    pos = _positions(keys)
    R = np.zeros((len(keys), len(keys)))
    unknown = 0
    for a, b in pairs:
        if a not in pos or b not in pos:
            unknown += 1
            continue
        ia, ib = pos[a], pos[b]
        R[np.ix_(ia, ib)] = 1.0
        R[np.ix_(ib, ia)] = 1.0
    if unknown:
        logger.warning("skipped %d pairs with keys not in the table", unknown)
    np.fill_diagonal(R, 0.0)
    return R


def load_taxonomy(path, key: str, levels: Sequence[str] = TAXONOMY_LEVELS,
                  delimiter: str = ",") -> dict[str, dict[str, str]]:
    path = resolve(path)
    header, rows = _read_rows(path, delimiter)
    kc = _column(header, key, path)
    lc = {lv: _column(header, lv, path) for lv in levels}
    out = {}
    for _, row in rows:
        out[row[kc].strip()] = {lv: row[c].strip() for lv, c in lc.items()}
    return out


def build_taxonomy_relations(keys: Sequence[str], taxonomy: Mapping[str, Mapping[str, str]],
                             level: str = "order") -> np.ndarray:
    """``r_ij = 1`` when rows i and j share a taxon at ``level``."""
    if level not in TAXONOMY_LEVELS:
        raise ConfigError(f"unknown taxonomy level {level!r}")
    taxa = []
    for k in keys:
        t = taxonomy.get(k, {}).get(level, "")
        taxa.append(t if t and t.lower() not in MISSING else None)
    missing = sum(t is None for t in taxa)
    if missing:
        logger.warning("%d keys have no %s; their relation rows are zero", missing, level)
    known = np.array([t is not None for t in taxa])
    labels = np.array([t or "" for t in taxa], dtype=object)
    R = ((labels[:, None] == labels[None, :]) & known[:, None] & known[None, :]).astype(float)
    np.fill_diagonal(R, 0.0)
    return R


# -- informativeness -------------------------------------------------------------

@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n_related: int
    n_unrelated: int


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance sup |F_a - F_b|."""
    a, b = np.sort(np.asarray(a, float)), np.sort(np.asarray(b, float))
    if a.size == 0 or b.size == 0:
        raise DiagnosticUndefinedError("KS statistic needs two nonempty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_pvalue(d: float, n1: int, n2: int) -> float:
    """Asymptotic two-sided p-value from the Kolmogorov limiting distribution."""
    en = n1 * n2 / (n1 + n2)
    return float(kolmogorov(d * np.sqrt(en)))


def ks_informativeness(y, R) -> KsResult:
    """Compare |y_i - y_j| over related pairs against unrelated pairs (i < j)."""
    y = np.asarray(y, float).reshape(-1)
    R = np.asarray(R, float)
    iu, ju = np.triu_indices(y.size, k=1)
    diff = np.abs(y[iu] - y[ju])
    related = R[iu, ju] > 0
    a, b = diff[related], diff[~related]
    if a.size == 0 or b.size == 0:
        raise DiagnosticUndefinedError(
            f"need both related and unrelated pairs, got {a.size} and {b.size}")
    d = ks_statistic(a, b)
    return KsResult(d, ks_pvalue(d, a.size, b.size), int(a.size), int(b.size))


# -- preprocessing ---------------------------------------------------------------

PREPROCESS_OPS = ("standardize", "log")


@dataclass
class Preprocessor:
    """Ordered column transforms; standardisation statistics come from ``rows`` only."""

    ops: tuple[str, ...]
    params: list[dict] = field(default_factory=list)

    def __post_init__(self):
        bad = [op for op in self.ops if op not in PREPROCESS_OPS]
        if bad:
            raise ConfigError(f"unknown preprocessing ops {bad}; expected {PREPROCESS_OPS}")

    def fit_transform(self, X, rows=None) -> np.ndarray:
        X = np.array(X, dtype=np.float64, copy=True)
        rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows, int)
        self.params = []
        for op in self.ops:
            if op == "log":
                X = _log(X)
                self.params.append({})
            else:
                mean = X[rows].mean(axis=0)
                std = X[rows].std(axis=0)
                std = np.where(std > 0, std, 1.0)
                self.params.append({"mean": mean, "std": std})
                X = (X - mean) / std
        return X

    def transform(self, X) -> np.ndarray:
        if len(self.params) != len(self.ops):
            raise ConfigError("transform() before fit_transform()")
        X = np.array(X, dtype=np.float64, copy=True)
        for op, p in zip(self.ops, self.params):
            X = _log(X) if op == "log" else (X - p["mean"]) / p["std"]
        return X


def _log(X: np.ndarray) -> np.ndarray:
    if np.any(X <= 0):
        raise DataError("log transform needs strictly positive values")
    return np.log(X)


def preprocess(X, ops: Sequence[str], rows=None) -> tuple[np.ndarray, Preprocessor]:
    pre = Preprocessor(tuple(ops))
    return pre.fit_transform(X, rows), pre


# -- splits by key ---------------------------------------------------------------

def split_by_keys(keys: Sequence[str], n_trial: int, n_validation: int, seed: int = 0) -> SplitIndex:
    """Trial and validation sets of whole keys (e.g. countries across all years)."""
    uniq = sorted(set(keys))
    if n_trial + n_validation >= len(uniq):
        raise ConfigError(f"{n_trial}+{n_validation} keys requested but only {len(uniq)} exist")
    perm = np.random.default_rng(seed).permutation(len(uniq))
    trial_keys = {uniq[i] for i in perm[:n_trial]}
    val_keys = {uniq[i] for i in perm[n_trial:n_trial + n_validation]}
    role = np.array([1 if k in trial_keys else 2 if k in val_keys else 0 for k in keys])
    return SplitIndex(np.flatnonzero(role == 0), np.flatnonzero(role == 1), np.flatnonzero(role == 2))


# -- IHDP ------------------------------------------------------------------------

IHDP_COVARIATES = tuple(f"x{k}" for k in range(1, 26))


@dataclass(frozen=True)
class IhdpTable:
    """One IHDP realisation: treatment, factual and counterfactual outcomes,
    noiseless potential outcome means and 25 covariates."""

    treatment: np.ndarray
    y_factual: np.ndarray
    y_cfactual: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    covariates: np.ndarray
    names: tuple[str, ...] = IHDP_COVARIATES


def load_ihdp(path) -> IhdpTable:
    path = resolve(path)
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if arr.shape[1] != 30:
        raise DataError(f"{path}: expected 30 columns, found {arr.shape[1]}")
    return IhdpTable(arr[:, 0].astype(int), arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], arr[:, 5:])


def ihdp_files(directory) -> list[Path]:
    """Realisation files in a directory, in natural order."""
    d = resolve(directory)
    files = [p for p in d.glob("*.csv") if p.is_file()]

    def order(p: Path):
        digits = "".join(ch for ch in p.stem if ch.isdigit())
        return (int(digits) if digits else -1, p.name)

    return sorted(files, key=order)
