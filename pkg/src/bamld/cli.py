"""Command-line entry point.

    bamld run --config exp.json [--experiment E] [--seeds 0,1,2] [--out DIR]
              [--profile desk|paper] [--workers N]
    bamld plot --csv results.csv --kind rmse_fig2 [--out fig.svg] [--methods a,b]
    bamld verify --suite all

Exit codes: 0 success, 1 configuration or input error, 2 runtime or
numerical failure, 3 failed property checks.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from bamld.config import EXPERIMENTS, OUT_DIR_ENV, PROFILES, ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3

log = logging.getLogger("bamld")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bamld", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True, help="JSON config file (flat keys)")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--seeds", type=_int_list, help="comma-separated seeds, e.g. 0,1,2")
    run.add_argument("--out", help=f"output directory (default: ${OUT_DIR_ENV} or the config value)")
    run.add_argument("--profile", choices=tuple(PROFILES))
    run.add_argument("--workers", type=int)
    run.add_argument("--no-plot", action="store_true", help="skip the SVG")

    plot = sub.add_parser("plot", help="draw mean +- stderr curves from a results CSV")
    plot.add_argument("--csv", required=True)
    plot.add_argument("--kind", required=True, help="rmse_fig2, rmse_fig3, clusters_fig4 or bo_fig5")
    plot.add_argument("--out", help="SVG path (default: <kind>.svg next to the CSV)")
    plot.add_argument("--methods", help="comma-separated subset of methods")

    ver = sub.add_parser("verify", help="run the property suite")
    ver.add_argument("--suite", choices=("all",), default="all")
    return p


def cmd_run(args) -> int:
    from bamld.harness import run_experiment

    cfg = load_config(args.config, args.profile, experiment=args.experiment, seeds=args.seeds,
                      output_dir=args.out, workers=args.workers)
    log.info("running %s (%s profile) into %s", cfg.experiment, cfg.profile, cfg.output_dir)
    outcome = run_experiment(cfg, plot=not args.no_plot)
    if outcome.failed_properties:
        print("failed properties: " + ", ".join(outcome.failed_properties), file=sys.stderr)
        return EXIT_ACCEPTANCE
    print(f"wrote {outcome.out_dir / 'results.csv'} ({len(outcome.rows)} rows)")
    return EXIT_OK


def cmd_plot(args) -> int:
    from bamld.plotting import plot_curves

    methods = None if args.methods is None else [m for m in args.methods.split(",") if m]
    path = plot_curves(args.csv, args.kind, args.out, methods)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from bamld.properties import run_all

    results = run_all()
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties hold")
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    from bamld.acquisition import SelectionError
    from bamld.active import LoopError
    from bamld.envs import OracleError
    from bamld.nn import DecompositionError
    from bamld.plotting import PlotError
    from bamld.svgd import NumericalError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are config errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    handlers = {"run": cmd_run, "plot": cmd_plot, "verify": cmd_verify}
    try:
        return handlers[args.command](args)
    except (ConfigError, PlotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DecompositionError, np.linalg.LinAlgError, FloatingPointError,
            LoopError, SelectionError, OracleError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
