"""Command line interface: ``digicopy <subcommand> ...``.

Exit status is 0 on success, 1 for input or validation errors and 2 for
internal errors.  Diagnostics go to stderr; data goes to stdout or to files
under ``--out``.
"""
import argparse
import logging
import os
import sys

from . import io as dio
from .errors import InputError
from .indicator import incremental_indicator, integral_indicator, window_correlation
from .model import simulate
from .regime import apply_blocking, parse_schedule
from .scenario import compare, run_pipeline

log = logging.getLogger("digicopy")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p, k=False):
    p.add_argument("--out", help="write files into this directory instead of stdout")
    p.add_argument("--seed", type=int, default=None, help="disturbance noise seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--format", choices=["csv"], default="csv", help="tabular output format")
    if k:
        p.add_argument("--k", type=int, required=True, help="window length in steps")


def build_parser():
    parser = _Parser(prog="digicopy", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="model file -> trajectory CSV")
    p.add_argument("model")
    p.add_argument("--regime", help="regime file supplying W and a blocking schedule")
    _common(p)

    p = sub.add_parser("indicate", help="trajectory CSV -> indicator report")
    p.add_argument("trajectory")
    p.add_argument("--incremental", action="store_true", help="use the streaming path")
    p.add_argument("--exclude-diagonal", action="store_true")
    p.add_argument("--label", default="")
    p.add_argument("--correlations", action="store_true",
                   help="also dump every window correlation matrix as t,i,j,r")
    _common(p, k=True)

    p = sub.add_parser("block", help="trajectory + schedule -> blocked trajectory CSV")
    p.add_argument("trajectory")
    p.add_argument("schedule")
    _common(p)

    p = sub.add_parser("compare", help="two report summaries -> comparison")
    p.add_argument("base")
    p.add_argument("alt")
    p.add_argument("--reference-delta", type=float, default=None,
                   help="externally reported dG to check against")
    _common(p)

    p = sub.add_parser("pipeline", help="scenario file -> reports and comparison")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--example", choices=["example3"], help="run a shipped scenario")
    _common(p)

    p = sub.add_parser("check", help="validate input or emitted files")
    p.add_argument("files", nargs="+")
    return parser


def _emit(text, out, name):
    if out:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        print(f"wrote {path}", file=sys.stderr)
    else:
        sys.stdout.write(text)


def cmd_simulate(args):
    spec = dio.load_model(args.model)
    if spec.x0 is None:
        raise InputError(f"{args.model}: model file has no x0")
    control = None
    regime = None
    if args.regime:
        regime = dio.load_regime(args.regime, spec.model)
        if regime.W is not None:
            control = regime.controller(spec.model)
    seed = spec.seed if args.seed is None else args.seed
    traj = simulate(spec.model, spec.x0, control, spec.disturbance, seed)
    if regime is not None:
        traj = apply_blocking(traj, regime.blocking)
    _emit(dio.format_trajectory(traj), args.out, "trajectory.csv")


def cmd_indicate(args):
    traj = dio.ingest_trajectory(args.trajectory)
    incl = not args.exclude_diagonal
    if args.incremental:
        rep = incremental_indicator(traj, args.k, include_diagonal=incl, label=args.label)
    else:
        rep = integral_indicator(traj, args.k, include_diagonal=incl, label=args.label,
                                 n_jobs=args.threads)
    if args.out:
        ypath, cpath = dio.write_report(rep, args.out)
        print(f"wrote {ypath}", file=sys.stderr)
        if args.correlations:
            mats = (window_correlation(traj, int(t), args.k) for t in rep.valid_steps)
            _emit(dio.format_correlation_triplets(mats), args.out, "correlations.csv")
    else:
        sys.stdout.write(dio.dump_yaml(dio.report_summary(rep)))


def cmd_block(args):
    traj = dio.ingest_trajectory(args.trajectory)
    sched = parse_schedule(args.schedule)
    _emit(dio.format_trajectory(apply_blocking(traj, sched)), args.out, "blocked.csv")


def _emit_comparison(res, out):
    if out:
        path, _ = dio.write_comparison(res, out)
        print(f"wrote {path}", file=sys.stderr)
    else:
        summary = res.summary()
        summary["kind"] = "comparison"
        sys.stdout.write(dio.dump_yaml(summary))


def cmd_compare(args):
    res = compare(dio.read_report(args.base), dio.read_report(args.alt), args.reference_delta)
    _emit_comparison(res, args.out)


def cmd_pipeline(args):
    if args.example:
        from .data import example_path
        path = example_path(args.example)
    elif args.scenario:
        path = args.scenario
    else:
        raise UsageError("pipeline needs a scenario file or --example")
    scn = dio.load_scenario(path)
    if args.seed is not None:
        scn.seed = args.seed
    scn.threads = args.threads
    res = run_pipeline(scn)
    if args.out:
        for rep in [res.baseline] + res.alternatives:
            dio.write_report(rep, args.out, "report_" + dio._safe(rep.label))
    _emit_comparison(res, args.out)


def cmd_check(args):
    for path in args.files:
        kind = dio.detect_kind(path)
        if kind == "schedule":
            parse_schedule(path)
        elif kind == "trajectory":
            dio.ingest_trajectory(path)
        elif kind == "indicator-report":
            dio.read_report(path)
        elif kind == "model":
            dio.load_model(path)
        elif kind == "scenario":
            dio.load_scenario(path)
        elif kind == "regime":
            dio.load_regime(path)
        elif kind == "deltas":
            dio.read_deltas(path)
        elif kind in ("comparison", "report-steps", "correlations"):
            with open(path) as fh:
                fh.read()
        print(f"ok {kind} {path}")


COMMANDS = {
    "simulate": cmd_simulate, "indicate": cmd_indicate, "block": cmd_block,
    "compare": cmd_compare, "pipeline": cmd_pipeline, "check": cmd_check,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
