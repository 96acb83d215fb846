"""Result tables, per-seed logs and plot data."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from ..datagen import curve_1d, generate
from ..errors import ConfigError, DataError, UnsupportedError
from .config import ExperimentConfig, dump_config
from .datasets import make_split, synthetic_spec, without_relations
from .runner import ResultRow, base_spec

FIELDS = ("dataset", "estimator", "learner", "metric", "mean", "std", "n_seeds")
FORMATS = ("csv", "json", "md")


def fmt(x: float) -> str:
    """Four significant digits."""
    if not np.isfinite(x):
        return str(x)
    return f"{x:.4g}"


def _cells(row: ResultRow) -> list[str]:
    return [row.dataset, row.estimator, row.learner, row.metric, fmt(row.mean), fmt(row.std), str(row.n_seeds)]


def render(rows: list[ResultRow], fmt_name: str) -> str:
    if not rows:
        raise DataError("no result rows to write")
    if fmt_name == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIELDS)
        w.writerows(_cells(r) for r in rows)
        return buf.getvalue()
    if fmt_name == "json":
        out = []
        for r in rows:
            d = dict(zip(FIELDS, _cells(r)))
            d["mean"], d["std"], d["n_seeds"] = float(d["mean"]), float(d["std"]), r.n_seeds
            out.append(d)
        return json.dumps(out, indent=2) + "\n"
    if fmt_name == "md":
        lines = ["| " + " | ".join(FIELDS) + " |", "|" + "---|" * len(FIELDS)]
        lines += ["| " + " | ".join(_cells(r)) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown format {fmt_name!r}; expected one of {FORMATS}")


def emit_results(rows: list[ResultRow], path, fmt_name: str | None = None) -> Path:
    path = Path(path)
    text = render(rows, fmt_name or path.suffix.lstrip("."))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return path


def write_outputs(config: ExperimentConfig, rows: list[ResultRow], records: list[dict],
                  out_dir=None, formats=FORMATS) -> list[Path]:
    """Results tables, resolved config and per-seed log, all byte-deterministic.

    Wall times go to ``timing.json`` alone since they change run to run.
    """
    out = Path(out_dir or config.output)
    written = [emit_results(rows, out / f"results.{f}", f) for f in formats]
    log = "".join(json.dumps({k: v for k, v in r.items() if k != "wall_time"}, sort_keys=True) + "\n"
                  for r in records)
    (out / "seeds.jsonl").write_text(log)
    (out / "config.yaml").write_text(dump_config(config))
    timing = [{"seed": r["seed"], "dataset": r["dataset"], "estimator": r["estimator"],
               "learner": r["learner"], "wall_time": round(r["wall_time"], 3)} for r in records]
    (out / "timing.json").write_text(json.dumps(timing, indent=1) + "\n")
    return written + [out / "seeds.jsonl", out / "config.yaml"]


# -- plot data -------------------------------------------------------------------

def plot_rows(regressor, data, clusters, family: str, scale: float, grid) -> list[tuple]:
    """Grid predictions per cluster; a grid point of cluster c relates to frame rows of cluster c."""
    out = []
    for c in np.unique(clusters):
        Rq = np.broadcast_to((clusters == c).astype(float), (grid.size, data.n))
        pred = regressor.predict(grid[:, None], Rq)
        truth = curve_1d(family, grid, c, scale)
        out.extend((int(c), float(x), float(p), float(t)) for x, p, t in zip(grid, pred, truth))
    return out


def emit_plot_data(config: ExperimentConfig, path, grid_size: int | None = None) -> Path:
    """Per-replicate grid predictions and true curves for each estimator."""
    grid_size = grid_size or int(config.plot.get("grid", 201))
    grid = np.linspace(-1.0, 1.0, grid_size)
    lines = ["dataset,estimator,replicate,cluster,x,prediction,truth"]
    for ds in config.datasets:
        if ds.kind != "synthetic":
            raise UnsupportedError(f"plot data needs a one-dimensional synthetic dataset, got {ds.kind}")
        for seed in config.seeds:
            spec = synthetic_spec(ds, seed)
            data, clusters = generate(spec, return_clusters=True)
            if data.d != 1:
                raise UnsupportedError(f"plot data needs one feature, {ds.tag!r} has {data.d}")
            split = make_split(config.split, data.n, seed)
            for est in config.estimators:
                frame = data if est.relations else without_relations(data)
                reg = base_spec(est, seed).make().fit(frame.X, frame.y, frame.R, split.background,
                                                      split.trial)
                for c, x, p, t in plot_rows(reg, data, clusters, spec.family, spec.scale, grid):
                    lines.append(f"{ds.tag},{est.tag},{seed},{c},{x:.6g},{p:.6g},{t:.6g}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path
