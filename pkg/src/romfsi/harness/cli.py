"""Command-line entry point: ``romfsi {train,run,compare,sweep,export-plots}``.

Every :class:`ExperimentConfig` key is also a flag (``delta_r`` becomes
``--delta-r``); flags override values from ``--config``. Exit codes: 0 when
every step converged, 2 when some did not (or the coupled solve broke down),
1 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ExperimentConfig, MODES, PREDICTORS

EXIT_OK, EXIT_ERROR, EXIT_UNCONVERGED = 0, 1, 2

logger = logging.getLogger("romfsi")

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _converter(default):
    """String parser for a config key, inferred from its default value."""
    if isinstance(default, bool):
        def conv(s):
            try:
                return _BOOL[s.lower()]
            except KeyError:
                raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}") from None
        return conv
    if isinstance(default, list):
        return lambda s: [float(x) for x in s.split(",")]

    base = type(default) if default is not None else str

    def conv(s):
        if s.lower() in ("none", "null", "inf"):
            return None
        return base(s)
    return conv


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file")
    g = p.add_argument_group("config overrides")
    for f in dataclasses.fields(ExperimentConfig):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=_converter(default),
                       default=argparse.SUPPRESS, metavar=type(default).__name__.upper())


def _config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    keys = {f.name for f in dataclasses.fields(ExperimentConfig)}
    changes = {k: v for k, v in vars(args).items() if k in keys}
    return cfg.replace(**changes).validate()


def _exit_for(ledger) -> int:
    # ledger errors come from inside the time loop (diverged coupling or a solver
    # breakdown it caused); setup errors raise and map to EXIT_ERROR in main
    if ledger.error is not None or not all(ledger.converged):
        return EXIT_UNCONVERGED
    return EXIT_OK


def _print_ledger(ledger, label=""):
    unconv = ledger.converged.count(False)
    print(f"{label}total_iterations={ledger.total_iterations} steps={len(ledger.times)} "
          f"unconverged={unconv} local_fallbacks={sum(ledger.local_fallback)} "
          f"refits={ledger.refits} wall_clock={ledger.wall_clock:.1f}s")
    if ledger.error:
        print(f"{label}error: {ledger.error}")


def cmd_train(args) -> int:
    from .experiment import run_offline

    cfg = _config_from_args(args)
    bundle = args.bundle or cfg.resolved_output_dir() / "bundle"
    out, _, _, report = run_offline(cfg, bundle)
    print(f"bundle written to {out}")
    print(json.dumps({k: v for k, v in report.items() if not k.endswith("spectrum")}, sort_keys=True))
    return EXIT_OK


def _run_dir(cfg, explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    return cfg.resolved_output_dir() / f"{cfg.mode}_{cfg.predictor}"


def cmd_run(args) -> int:
    from .experiment import run_online

    cfg = _config_from_args(args)
    d = _run_dir(cfg, args.run_dir)
    ledger = run_online(cfg, directory=d)
    _print_ledger(ledger)
    print(f"outputs written to {d}")
    return _exit_for(ledger)


def cmd_compare(args) -> int:
    from .experiment import compare_runs, load_run_outputs

    ref, summ = load_run_outputs(args.reference)
    cand, _ = load_run_outputs(args.candidate)
    baseline = summ["a0"] if args.field != "forces" and not args.raw else 0.0
    rep = compare_runs(ref, cand, baseline=baseline, field_name=args.field)
    print(f"field={args.field} mean_error={rep.mean_error:.6g} max_error={rep.max_error:.6g} "
          f"iterations ref={ref.total_iterations} cand={cand.total_iterations} "
          f"delta={cand.total_iterations - ref.total_iterations}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "relative_error", "iteration_delta"])
            for row in zip(rep.times, rep.errors, rep.iteration_delta):
                w.writerow([repr(float(row[0])), repr(float(row[1])), int(row[2])])
    return EXIT_OK


def _sweep_cell(cfg: ExperimentConfig, directory: str):
    from .experiment import run_online

    ledger = run_online(cfg, directory=directory)
    return (ledger.total_iterations, ledger.converged.count(False), ledger.error,
            sum(ledger.local_fallback), ledger.wall_clock)


def cmd_sweep(args) -> int:
    base = _config_from_args(args)
    root = base.resolved_output_dir() / "sweep"
    cells = []
    for mode in args.modes:
        for pred in args.predictors:
            cfg = base.replace(mode=mode, predictor=pred)
            try:
                cfg.validate()
            except ValueError as exc:
                print(f"skipping {mode}/{pred}: {exc}")
                continue
            cells.append((cfg, str(root / f"{mode}_{pred}")))
    if not cells:
        print("no runnable cells", file=sys.stderr)
        return EXIT_ERROR
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_cell, *zip(*cells)))
    else:
        results = [_sweep_cell(c, d) for c, d in cells]
    root.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    with open(root / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "predictor", "total_iterations", "unconverged", "local_fallbacks",
                    "wall_clock", "error"])
        for (cfg, _), (total, unconv, err, fb, wall) in zip(cells, results):
            w.writerow([cfg.mode, cfg.predictor, total, unconv, fb, f"{wall:.3f}", err or ""])
            print(f"{cfg.mode:8s} {cfg.predictor:12s} total={total} unconverged={unconv}"
                  + (f" error={err}" if err else ""))
            if err or unconv:
                status = EXIT_UNCONVERGED
    print(f"summary written to {root / 'sweep.csv'}")
    return status


def cmd_export_plots(args) -> int:
    from .plots import export_plots

    written = export_plots(args.runs, args.out, args.labels)
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="romfsi", description="Partitioned FSI runs with ROM-based predictors.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="generate or load snapshots and write a model bundle")
    _add_config_flags(p)
    p.add_argument("--bundle", type=Path, help="bundle directory (default <output>/bundle)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run one online simulation and write its outputs")
    _add_config_flags(p)
    p.add_argument("--run-dir", type=Path, help="output directory (default <output>/<mode>_<predictor>)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="relative error of a candidate run against a reference run")
    p.add_argument("reference", type=Path)
    p.add_argument("candidate", type=Path)
    p.add_argument("--field", choices=("outlet", "sections", "forces"), default="outlet")
    p.add_argument("--raw", action="store_true", help="compare raw sections instead of deviations from rest")
    p.add_argument("--out", type=Path, help="per-step error CSV")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="run a predictor x mode matrix")
    _add_config_flags(p)
    p.add_argument("--predictors", nargs="+", choices=PREDICTORS, default=list(PREDICTORS))
    p.add_argument("--modes", nargs="+", choices=MODES, default=["fom-fom"])
    p.add_argument("--jobs", type=int, default=1, help="parallel processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-plots", help="CSV series and PNG figures from run directories")
    p.add_argument("runs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=Path("plots"))
    p.add_argument("--labels", nargs="+")
    p.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
