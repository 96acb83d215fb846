"""Turn a dataset spec and a seed into data plus a split."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import data_io
from ..data import RelDataset, SplitIndex, TreatmentDataset
from ..datagen import SyntheticSpec, gen_additive_effect, generate, split_counts, split_dataset
from ..errors import ConfigError
from ..metalearners import build_ihdp_rel
from .config import DatasetSpec, SplitSpec

SYNTHETIC_KEYS = {"family", "n", "r_mode", "cluster_scale"}
ADDITIVE_KEYS = {"n", "effect", "r_mode", "noise"}
TABLE_KEYS = {"path", "features", "target", "key", "delimiter", "year_column", "year", "relations",
              "feature_ops", "target_ops", "diagnose_year"}
IHDP_KEYS = {"path", "column"}


@dataclass
class Built:
    data: RelDataset | TreatmentDataset
    split: SplitIndex
    keys: list[str] | None = None


def _check_keys(spec: DatasetSpec, allowed: set[str]) -> None:
    extra = set(spec.params) - allowed
    if extra:
        raise ConfigError(f"dataset {spec.tag!r}: unknown keys {sorted(extra)}")


def make_split(split: SplitSpec, n: int, seed: int, keys=None) -> SplitIndex:
    if split.by_key:
        if keys is None:
            raise ConfigError("split by_key needs a keyed table dataset")
        return data_io.split_by_keys(keys, split.n_trial, split.n_validation, seed)
    if split.n_trial is not None:
        return split_counts(n, split.n_trial, split.n_validation, seed)
    return split_dataset(n, split.fractions, seed)


def synthetic_spec(spec: DatasetSpec, seed: int) -> SyntheticSpec:
    _check_keys(spec, SYNTHETIC_KEYS)
    if "family" not in spec.params:
        raise ConfigError(f"dataset {spec.tag!r}: synthetic data needs a family")
    return SyntheticSpec(seed=seed, **spec.params)


@lru_cache(maxsize=8)
def _table(path, features, target, key, delimiter, year_column, year, relations, feature_ops,
           target_ops):
    source = data_io.TableSource(path, features, target, key, delimiter, year_column, year)
    table = data_io.load_table(source)
    rel = dict(relations)
    kind = rel.get("kind", "pair_list")
    if kind == "pair_list":
        R = data_io.build_pair_relations(table.keys, data_io.load_pair_list(rel["path"]))
    elif kind in ("taxonomy", "taxonomy_column"):
        level = rel.get("level", "order")
        tax = data_io.load_taxonomy(rel["path"], rel.get("key", key), (level,))
        R = data_io.build_taxonomy_relations(table.keys, tax, level)
    else:
        raise ConfigError(f"unknown relation source kind {kind!r}")
    X, y = table.X, table.y
    # stateless ops only; standardisation happens inside each estimator
    if feature_ops:
        X, _ = data_io.preprocess(X, feature_ops)
    if target_ops:
        y = data_io.preprocess(y[:, None], target_ops)[0][:, 0]
    return table.keys, RelDataset(X, y, R)


def load_table_dataset(spec: DatasetSpec, year=None):
    _check_keys(spec, TABLE_KEYS)
    p = spec.params
    missing = [k for k in ("path", "features", "target", "key", "relations") if k not in p]
    if missing:
        raise ConfigError(f"dataset {spec.tag!r}: missing {missing}")
    for name in ("feature_ops", "target_ops"):
        if "standardize" in p.get(name, ()):
            raise ConfigError(f"dataset {spec.tag!r}: {name} accepts only 'log'; "
                              "standardisation is done per split by the estimators")
    return _table(str(p["path"]), tuple(p["features"]), p["target"], p["key"], p.get("delimiter", ","),
                  p.get("year_column"), p.get("year") if year is None else year,
                  tuple(sorted(p["relations"].items())), tuple(p.get("feature_ops", ())),
                  tuple(p.get("target_ops", ())))


def build(spec: DatasetSpec, split: SplitSpec, seed: int) -> Built:
    if spec.kind == "synthetic":
        ds = generate(synthetic_spec(spec, seed))
        return Built(ds, make_split(split, ds.n, seed))
    if spec.kind == "additive":
        _check_keys(spec, ADDITIVE_KEYS)
        ds = gen_additive_effect(seed=seed, **spec.params)
        return Built(ds, make_split(split, ds.n, seed))
    if spec.kind == "table":
        keys, ds = load_table_dataset(spec)
        return Built(ds, make_split(split, ds.n, seed, keys), keys)
    _check_keys(spec, IHDP_KEYS)
    files = data_io.ihdp_files(spec.params.get("path", "ihdp"))
    if not files:
        raise ConfigError(f"dataset {spec.tag!r}: no IHDP realisation files found")
    table = data_io.load_ihdp(files[seed % len(files)])
    ds = build_ihdp_rel(table, spec.params.get("column", "x4"))
    return Built(ds, make_split(split, ds.n, seed))


def without_relations(data):
    zeros = np.zeros_like(data.R)
    if isinstance(data, TreatmentDataset):
        return TreatmentDataset(data.X, data.W, data.Y, zeros, data.tau_true)
    return RelDataset(data.X, data.y, zeros)
