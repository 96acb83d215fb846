"""Seeded experiment loop and aggregation."""

from __future__ import annotations

import contextlib
import logging
import signal
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import RelAttnError
from ..metalearners import BaseSpec, pehe_report, run_learner
from ..nw import nw_fit
from ..tabrel import tabrel_fit
from .config import EstimatorSpec, ExperimentConfig
from .datasets import build, without_relations

logger = logging.getLogger(__name__)


class ExperimentError(RelAttnError):
    """A module error annotated with the seed and cell it happened in."""

    def __init__(self, message: str, seed: int, dataset: str, estimator: str, cause: str):
        super().__init__(message)
        self.seed, self.dataset, self.estimator, self.cause = seed, dataset, estimator, cause


class FitTimeout(RelAttnError):
    pass


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    estimator: str
    learner: str
    metric: str
    mean: float
    std: float
    n_seeds: int
    wall_time: float = 0.0


@contextlib.contextmanager
def time_limit(seconds: float, what: str):
    """Abort the body with :class:`FitTimeout` after ``seconds`` (main thread only)."""
    usable = hasattr(signal, "setitimer") and threading.current_thread() is threading.main_thread()
    if not usable:
        start = time.perf_counter()
        yield
        if time.perf_counter() - start > seconds:
            raise FitTimeout(f"{what} exceeded the {seconds:g} s budget")
        return

    def handler(signum, frame):
        raise FitTimeout(f"{what} exceeded the {seconds:g} s budget")

    previous = signal.signal(signal.SIGALRM, handler)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, previous)


def base_spec(est: EstimatorSpec, seed: int) -> BaseSpec:
    return BaseSpec(est.kind, est.variant, est.nw_config(seed), est.tabrel_config(),
                    est.tabrel_fit_config(seed))


def _regression(est: EstimatorSpec, data, split, seed: int) -> dict[str, float]:
    if est.kind == "nw":
        res = nw_fit(data, split, est.variant, est.nw_config(seed))
    else:
        res = tabrel_fit(data, split, est.tabrel_config(), est.tabrel_fit_config(seed))
    return {"mse": res.validation_mse, "r2": res.validation_r2, "epochs": res.epochs_run}


def run_seed(config: ExperimentConfig, seed: int) -> list[dict]:
    """All (dataset, estimator, learner) cells for one seed, as log records."""
    records = []
    for ds_spec in config.datasets:
        try:
            built = build(ds_spec, config.split, seed)
        except (RelAttnError, ValueError, OSError) as exc:
            raise ExperimentError(f"seed {seed}, dataset {ds_spec.tag}: {type(exc).__name__}: {exc}", seed,
                                  ds_spec.tag, "", type(exc).__name__) from exc
        for est in config.estimators:
            data = built.data if est.relations else without_relations(built.data)
            for learner in config.learners or [""]:
                what = f"seed {seed}, dataset {ds_spec.tag}, estimator {est.tag}" + \
                    (f", learner {learner}" if learner else "")
                start = time.perf_counter()
                try:
                    with time_limit(config.timeout, what):
                        if learner:
                            est_tau = run_learner(learner, data, built.split, base_spec(est, seed))
                            rep = pehe_report(est_tau, data, built.split)
                            values = {"pehe_in": rep["pehe_in"], "pehe": rep.get("pehe_out", np.nan)}
                        else:
                            values = _regression(est, data, built.split, seed)
                except (RelAttnError, ValueError, FloatingPointError) as exc:
                    raise ExperimentError(f"{what}: {type(exc).__name__}: {exc}", seed, ds_spec.tag,
                                          est.tag, type(exc).__name__) from exc
                values = {k: float(v) for k, v in values.items() if v is not None}
                records.append({"seed": seed, "dataset": ds_spec.tag, "estimator": est.tag,
                                "learner": learner, "metrics": values,
                                "wall_time": time.perf_counter() - start})
                logger.info("%s: %s", what, values)
    return records


def metric_names(config: ExperimentConfig) -> list[str]:
    names = []
    for m in config.metrics:
        names.extend(["pehe_in", "pehe"] if m == "pehe" else [m])
    return names


def aggregate(config: ExperimentConfig, records: list[dict]) -> list[ResultRow]:
    """Mean and sample standard deviation per cell, in config order."""
    rows = []
    for ds in config.datasets:
        for est in config.estimators:
            for learner in config.learners or [""]:
                cell = [r for r in records
                        if (r["dataset"], r["estimator"], r["learner"]) == (ds.tag, est.tag, learner)]
                cell.sort(key=lambda r: r["seed"])
                wall = float(sum(r["wall_time"] for r in cell))
                for metric in metric_names(config):
                    vals = np.array([r["metrics"][metric] for r in cell], dtype=float)
                    std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
                    rows.append(ResultRow(ds.tag, est.tag, learner, metric, float(np.mean(vals)), std,
                                          int(vals.size), wall))
    return rows


def collect(config: ExperimentConfig) -> list[dict]:
    """Per-seed records ordered by seed position (duplicates kept)."""
    if config.jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            chunks = list(pool.map(run_seed, [config] * len(config.seeds), config.seeds))
    else:
        chunks = [run_seed(config, s) for s in config.seeds]
    return [r for chunk in chunks for r in chunk]


def run_experiment(config: ExperimentConfig) -> tuple[list[ResultRow], list[dict]]:
    records = collect(config)
    return aggregate(config, records), records
