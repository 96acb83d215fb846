"""Named experiment protocols: one toy figure, the benchmark tables and two real-data setups."""

from __future__ import annotations

import copy

from ..errors import ConfigError
from .config import ExperimentConfig

DEFAULT_SEEDS = 30
TABREL_EPOCHS = 600

VANILLA = {"tag": "nw_vanilla", "kind": "nw", "variant": "vanilla"}
REL_FEATURES = {"tag": "nw_rel_features", "kind": "nw", "variant": "rel_features"}
REL_KERNEL = {"tag": "nw_rel", "kind": "nw", "variant": "rel_kernel"}
LEARNABLE = {"tag": "nw_rel_learnable_norm", "kind": "nw", "variant": "learnable_norm"}
LEARNABLE_NO_REL = {"tag": "nw_learnable_norm", "kind": "nw", "variant": "learnable_norm", "relations": False}
MLP = {"tag": "nw_rel_mlp", "kind": "nw", "variant": "mlp_embed"}
TABREL = {"tag": "tabrel", "kind": "tabrel", "tabrel_fit": {"epochs": TABREL_EPOCHS}}


def _synthetic(families, n, r_mode=None):
    out = []
    for fam in families:
        d = {"tag": fam, "kind": "synthetic", "family": fam, "n": n}
        if r_mode:
            d["r_mode"] = r_mode
        out.append(d)
    return out


def _base(name, datasets, estimators, **kw):
    return {"name": name, "datasets": datasets, "estimators": estimators, "seeds": DEFAULT_SEEDS,
            "metrics": ["mse", "r2"], "output": f"results/{name}", **kw}


LIFE_EXPECTANCY = {
    "tag": "life_expectancy", "kind": "table", "path": "life_expectancy.csv",
    "features": ["Hepatitis_B", "Polio", "Diphtheria", "Incidents_HIV", "BMI"],
    "target": "Life_expectancy", "key": "Country", "year_column": "Year", "diagnose_year": 2015,
    "relations": {"kind": "pair_list", "path": "country_borders.csv"},
}

BIRDS = {
    "tag": "birds", "kind": "table", "path": "birds.csv",
    "features": ["body_mass", "breeding_range"], "target": "genetic_richness", "key": "species",
    "feature_ops": ["log"], "target_ops": ["log"],
    "relations": {"kind": "taxonomy", "path": "birds_taxonomy.csv", "level": "order"},
}

_PRESETS = {
    "fig1": _base("fig1", _synthetic(["parabolas"], 300, "deterministic"), [VANILLA, REL_KERNEL],
                  metrics=["r2"], plot={"grid": 201}),
    "table1": _base("table1", _synthetic(["parabolas", "step"], 300, "deterministic"),
                    [VANILLA, REL_FEATURES, REL_KERNEL, TABREL]),
    "table2": _base("table2", _synthetic(["parabolas", "step"], 300, "random_half"),
                    [VANILLA, REL_FEATURES, REL_KERNEL, TABREL]),
    "table3_n300": _base("table3_n300", _synthetic(["linear2d", "square2d", "sin2d"], 300),
                         [VANILLA, LEARNABLE_NO_REL, REL_FEATURES, REL_KERNEL, LEARNABLE, MLP, TABREL],
                         metrics=["r2"]),
    "table3_n1000": _base("table3_n1000", _synthetic(["linear2d", "square2d", "sin2d"], 1000),
                          [VANILLA, LEARNABLE_NO_REL, REL_FEATURES, REL_KERNEL, LEARNABLE, MLP, TABREL],
                          metrics=["r2"]),
    "table4": _base("table4", _synthetic(["noisy7d"], 300),
                    [VANILLA, REL_FEATURES, REL_KERNEL, LEARNABLE, MLP, TABREL]),
    "table5": _base("table5", [{"tag": "ihdp", "kind": "ihdp", "path": "ihdp", "column": "x4"}],
                    [VANILLA, REL_FEATURES, REL_KERNEL, LEARNABLE, MLP, TABREL],
                    metrics=["pehe"], learners=["S", "T", "X"]),
    "lifeexp": _base("lifeexp", [LIFE_EXPECTANCY],
                     [VANILLA, REL_FEATURES, REL_KERNEL, LEARNABLE, MLP, TABREL],
                     split={"n_trial": 30, "n_validation": 30, "by_key": True}),
    "birds": _base("birds", [BIRDS], [VANILLA, REL_FEATURES, REL_KERNEL, LEARNABLE, MLP, TABREL]),
}

PRESET_NAMES = tuple(_PRESETS)


def preset_dict(name: str) -> dict:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    return copy.deepcopy(_PRESETS[name])


def preset(name: str) -> ExperimentConfig:
    return ExperimentConfig.from_dict(preset_dict(name))
