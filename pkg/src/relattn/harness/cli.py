"""Command line entry point.

Exit status is 0 on success.  On failure a single JSON object
``{"error": <type>, "message": <text>, ...}`` goes to stderr and the status
is 2 for configuration problems and 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..data_io import ks_informativeness
from ..datagen import generate
from ..errors import ConfigError, RelAttnError
from .config import ExperimentConfig, apply_overrides, dump_config, load_config_file
from .datasets import build, load_table_dataset, synthetic_spec
from .output import FORMATS, emit_plot_data, write_outputs
from .presets import PRESET_NAMES, preset_dict
from .runner import ExperimentError, run_experiment


def _finish(raw: dict, args) -> ExperimentConfig:
    raw = apply_overrides(raw, args.set or [])
    if getattr(args, "seeds", None) is not None:
        raw["seeds"] = args.seeds
    if getattr(args, "out", None):
        raw["output"] = args.out
    if getattr(args, "jobs", None):
        raw["jobs"] = args.jobs
    return ExperimentConfig.from_dict(raw)


def _run(config: ExperimentConfig, formats) -> int:
    rows, records = run_experiment(config)
    written = write_outputs(config, rows, records, formats=formats)
    for r in rows:
        label = f"{r.dataset:16s} {r.estimator:24s} {r.learner:2s} {r.metric:8s}"
        print(f"{label} {r.mean: .4g} +- {r.std:.2g}  (n={r.n_seeds}, {r.wall_time:.1f}s)")
    print(f"wrote {', '.join(str(p) for p in written)}")
    return 0


def cmd_run(args) -> int:
    return _run(_finish(load_config_file(args.config), args), args.formats)


def cmd_preset(args) -> int:
    config = _finish(preset_dict(args.name), args)
    if args.dump:
        sys.stdout.write(dump_config(config))
        return 0
    return _run(config, args.formats)


def cmd_diagnose(args) -> int:
    config = _finish(load_config_file(args.config) if Path(args.config).exists() or args.config not in
                     PRESET_NAMES else preset_dict(args.config), args)
    out = []
    for ds in config.datasets:
        if ds.kind == "table":
            _, data = load_table_dataset(ds, year=ds.params.get("diagnose_year"))
            y = data.y
        elif ds.kind == "synthetic":
            data = generate(synthetic_spec(ds, config.seeds[0]))
            y = data.y
        else:
            data = build(ds, config.split, config.seeds[0]).data
            y = data.Y
        res = ks_informativeness(y, data.R)
        out.append({"dataset": ds.tag, "statistic": res.statistic, "p_value": res.p_value,
                    "n_related": res.n_related, "n_unrelated": res.n_unrelated})
    print(json.dumps(out, indent=2))
    return 0


def cmd_plotdata(args) -> int:
    source = args.config
    raw = load_config_file(source) if Path(source).exists() or source not in PRESET_NAMES else preset_dict(source)
    config = _finish(raw, args)
    path = Path(args.out_file or Path(config.output) / "plot_data.csv")
    emit_plot_data(config, path)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relattn", description="Relationship-aware regression experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (dotted path, list items by index)")
        sp.add_argument("--seeds", type=int, help="use seeds 0..N-1")
        if out:
            sp.add_argument("--out", help="output directory")
            sp.add_argument("--jobs", type=int, help="worker processes for seeds")
            sp.add_argument("--formats", type=lambda s: tuple(s.split(",")), default=FORMATS,
                            help="comma separated subset of csv,json,md")

    r = sub.add_parser("run", help="run an experiment config file")
    r.add_argument("config")
    common(r)
    r.set_defaults(func=cmd_run)

    pr = sub.add_parser("preset", help="run a named protocol")
    pr.add_argument("name", choices=PRESET_NAMES)
    pr.add_argument("--dump", action="store_true", help="print the resolved config and exit")
    common(pr)
    pr.set_defaults(func=cmd_preset)

    d = sub.add_parser("diagnose-rel", help="KS informativeness test of a dataset's relations")
    d.add_argument("config", help="config file or preset name")
    common(d, out=False)
    d.set_defaults(func=cmd_diagnose)

    pl = sub.add_parser("plotdata", help="grid predictions per replicate for 1-D datasets")
    pl.add_argument("config", help="config file or preset name")
    pl.add_argument("--out-file", help="CSV path (default <output>/plot_data.csv)")
    common(pl, out=False)
    pl.set_defaults(func=cmd_plotdata)
    return p


def error_payload(exc: BaseException) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ExperimentError):
        payload.update(seed=exc.seed, dataset=exc.dataset, estimator=exc.estimator, cause=exc.cause)
    return payload


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if hasattr(args, "formats"):
            bad = [f for f in args.formats if f not in FORMATS]
            if bad:
                raise ConfigError(f"unknown formats {bad}")
        return args.func(args)
    except (RelAttnError, OSError) as exc:
        print(json.dumps(error_payload(exc)), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
