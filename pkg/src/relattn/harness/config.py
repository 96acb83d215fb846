"""Experiment configuration: YAML files, dotted overrides and validation.

Precedence, lowest first: preset or config file, ``--set key=value``
overrides, then the dedicated CLI flags (``--seeds``, ``--out``).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from ..errors import ConfigError
from ..nw import VARIANTS, NwFitConfig
from ..tabrel import TabRelConfig, TabRelFitConfig

DATASET_KINDS = ("synthetic", "additive", "table", "ihdp")
METRICS = ("mse", "r2", "pehe")
LEARNERS = ("S", "T", "X")


def _known(cls, values: dict, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    extra = set(values) - names
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    out = dict(values)
    for k, v in out.items():
        if isinstance(v, list):
            out[k] = tuple(v)
    return out


@dataclass
class EstimatorSpec:
    tag: str
    kind: str = "nw"
    variant: str = "rel_kernel"
    # False fits on an all-zero relation matrix
    relations: bool = True
    nw: dict = field(default_factory=dict)
    tabrel: dict = field(default_factory=dict)
    tabrel_fit: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("nw", "tabrel"):
            raise ConfigError(f"estimator {self.tag!r}: kind must be 'nw' or 'tabrel'")
        if self.kind == "nw" and self.variant not in VARIANTS:
            raise ConfigError(f"estimator {self.tag!r}: unknown variant {self.variant!r}")
        # fail early on misspelt hyperparameters
        self.nw_config(0)
        self.tabrel_config()
        self.tabrel_fit_config(0)

    def nw_config(self, seed: int) -> NwFitConfig:
        return NwFitConfig(**{**_known(NwFitConfig, self.nw, f"estimator {self.tag!r} nw"), "seed": seed})

    def tabrel_config(self) -> TabRelConfig:
        return TabRelConfig(**_known(TabRelConfig, self.tabrel, f"estimator {self.tag!r} tabrel"))

    def tabrel_fit_config(self, seed: int) -> TabRelFitConfig:
        kw = _known(TabRelFitConfig, self.tabrel_fit, f"estimator {self.tag!r} tabrel_fit")
        return TabRelFitConfig(**{**kw, "seed": seed})


@dataclass
class DatasetSpec:
    tag: str
    kind: str = "synthetic"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset {self.tag!r}: kind must be one of {DATASET_KINDS}")

    @property
    def treatment(self) -> bool:
        return self.kind in ("additive", "ihdp")


@dataclass
class SplitSpec:
    fractions: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    n_trial: int | None = None
    n_validation: int | None = None
    # split whole keys (e.g. countries across years) instead of rows
    by_key: bool = False

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if (self.n_trial is None) != (self.n_validation is None):
            raise ConfigError("split: give both n_trial and n_validation or neither")
        if self.by_key and self.n_trial is None:
            raise ConfigError("split: by_key needs n_trial and n_validation")


@dataclass
class ExperimentConfig:
    name: str
    datasets: list[DatasetSpec]
    estimators: list[EstimatorSpec]
    seeds: list[int]
    metrics: list[str] = field(default_factory=lambda: ["mse", "r2"])
    learners: list[str] = field(default_factory=list)
    split: SplitSpec = field(default_factory=SplitSpec)
    output: str = "results"
    timeout: float = 600.0
    jobs: int = 1
    plot: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if not self.metrics:
            raise ConfigError("metrics must be nonempty")
        if not self.datasets or not self.estimators:
            raise ConfigError("datasets and estimators must be nonempty")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ConfigError(f"unknown metrics {bad}; expected a subset of {METRICS}")
        bad = [x for x in self.learners if x not in LEARNERS]
        if bad:
            raise ConfigError(f"unknown learners {bad}; expected a subset of {LEARNERS}")
        if "pehe" in self.metrics:
            if not self.learners:
                raise ConfigError("metric pehe needs at least one learner")
            plain = [d.tag for d in self.datasets if not d.treatment]
            if plain:
                raise ConfigError(f"metric pehe needs true effects; datasets {plain} have none")
        if self.learners and any(m != "pehe" for m in self.metrics):
            raise ConfigError("with learners configured the only metric is pehe")
        if self.timeout <= 0 or self.jobs < 1:
            raise ConfigError("timeout must be positive and jobs at least 1")
        tags = [e.tag for e in self.estimators]
        if len(set(tags)) != len(tags):
            raise ConfigError(f"duplicate estimator tags in {tags}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = copy.deepcopy(raw)
        try:
            datasets = []
            for d in raw.pop("datasets", []):
                d = dict(d)
                datasets.append(DatasetSpec(d.pop("tag"), d.pop("kind", "synthetic"), d))
            estimators = [EstimatorSpec(**e) for e in raw.pop("estimators", [])]
            split = SplitSpec(**raw.pop("split", {}))
            seeds = raw.pop("seeds", None)
            if isinstance(seeds, int):
                seeds = list(range(seeds))
            return cls(datasets=datasets, estimators=estimators, split=split,
                       seeds=[int(s) for s in (seeds or [])], **raw)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seeds": list(self.seeds),
            "metrics": list(self.metrics),
            "learners": list(self.learners),
            "split": {"fractions": list(self.split.fractions), "n_trial": self.split.n_trial,
                      "n_validation": self.split.n_validation, "by_key": self.split.by_key},
            "datasets": [{"tag": d.tag, "kind": d.kind, **d.params} for d in self.datasets],
            "estimators": [{"tag": e.tag, "kind": e.kind, "variant": e.variant, "relations": e.relations,
                            "nw": dict(e.nw), "tabrel": dict(e.tabrel), "tabrel_fit": dict(e.tabrel_fit)}
                           for e in self.estimators],
            "output": self.output,
            "timeout": self.timeout,
            "jobs": self.jobs,
            "plot": dict(self.plot),
        }


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.0.c=value`` assignments; values are parsed as YAML scalars."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        node: Any = raw
        for k in keys[:-1]:
            node = _child(node, k, path)
        last = keys[-1]
        parsed = yaml.safe_load(value) if value.strip() else ""
        if isinstance(node, list):
            node[_index(node, last, path)] = parsed
        elif isinstance(node, dict):
            node[last] = parsed
        else:
            raise ConfigError(f"override {path!r}: cannot set a key on a scalar")
    return raw


def _index(node: list, key: str, path: str) -> int:
    try:
        i = int(key)
        node[i]
        return i
    except (ValueError, IndexError):
        raise ConfigError(f"override {path!r}: bad list index {key!r}") from None


def _child(node, key: str, path: str):
    if isinstance(node, list):
        return node[_index(node, key, path)]
    if isinstance(node, dict):
        return node.setdefault(key, {})
    raise ConfigError(f"override {path!r}: cannot descend into a scalar")


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    return raw


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True)
