"""Command line entry point.

Subcommands: run, converge-space, converge-time, bench-precond, bench-scale,
plot-data.  Exit codes: 0 success, 2 configuration error, 3 solver stall.
"""

from __future__ import annotations

import argparse
import os
import sys

from ..exceptions import ConfigError, SolverStallError
from . import drivers
from .config import load_config
from .io import read_history, write_xy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STALL = 3


def _add_common(sub):
    sub.add_argument("--config", required=True, help="INI run configuration")
    sub.add_argument("--threads", type=int, default=1, help="worker threads")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override the initial-condition seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acch",
        description="Energy-stable solver for the coupled Allen-Cahn/Cahn-Hilliard system",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="advance a simulation to its horizon")
    _add_common(run)
    run.add_argument("--snapshot-every", type=int, default=0, metavar="STEPS",
                     help="write a field snapshot every N steps")

    cs = subs.add_parser("converge-space", help="spatial self-convergence study")
    _add_common(cs)
    cs.add_argument("--meshes", type=int, nargs="+", default=[32, 64, 128, 256])
    cs.add_argument("--reference-mesh", type=int, default=512)
    cs.add_argument("--dt", type=float, default=5e-5)
    cs.add_argument("--horizon", type=float, default=5e-3)

    ct = subs.add_parser("converge-time", help="temporal self-convergence study")
    _add_common(ct)
    ct.add_argument("--dts", type=float, nargs="+", default=[8e-3, 4e-3, 2e-3, 1e-3])
    ct.add_argument("--reference-dt", type=float, default=5e-5)
    ct.add_argument("--horizon", type=float, default=3.2e-2)

    bp = subs.add_parser("bench-precond", help="preconditioner / subdomain-solver sweep")
    _add_common(bp)
    bp.add_argument("--steps", type=int, default=10)
    bp.add_argument("--dt", type=float, default=1e-4)

    bs = subs.add_parser("bench-scale", help="strong/weak thread scaling sweep")
    _add_common(bs)
    bs.add_argument("--thread-list", type=int, nargs="+", default=[1, 2, 4, 8])
    bs.add_argument("--mode", choices=("strong", "weak"), default="strong")
    bs.add_argument("--steps", type=int, default=10)
    bs.add_argument("--dt", type=float, default=1e-4)

    pd = subs.add_parser("plot-data", help="emit gnuplot-ready energy and step-size files")
    pd.add_argument("--history", required=True, help="history CSV from a run")
    pd.add_argument("--out", required=True, help="output directory")
    return parser


def _load(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _write_table(rows, header, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row.to_csv() + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot-data":
            rows = read_history(args.history)
            write_xy(os.path.join(args.out, "energy.dat"), [r.time for r in rows], [r.energy for r in rows])
            steps = [r for r in rows if r.step > 0]
            write_xy(os.path.join(args.out, "dt.dat"), [r.time for r in steps], [r.dt for r in steps])
            print(f"wrote {args.out}/energy.dat and {args.out}/dt.dat")
            return EXIT_OK

        config = _load(args)

        if args.command == "run":
            result = drivers.simulate(
                config, threads=args.threads, out_dir=args.out, snapshot_every=args.snapshot_every
            )
            last = result.history[-1]
            print(
                f"{result.status}: {last.step} steps to t={last.time:.6g}, "
                f"energy {last.energy:.8g}, max|v| {last.max_abs_v:.3e}"
            )
            return EXIT_OK if result.completed else EXIT_STALL

        if args.command == "converge-space":
            report = drivers.converge_space(
                config, args.meshes, args.reference_mesh, args.dt, args.horizon, threads=args.threads
            )
            for m, e in zip(report.labels, report.errors):
                print(f"mesh {int(m):>5d}: rel l2 error {e:.6e}")
            print(f"observed spatial order: {report.order:.3f}")
            if args.out:
                path = os.path.join(args.out, "converge_space.csv")
                os.makedirs(args.out, exist_ok=True)
                with open(path, "w") as fh:
                    fh.write(report.to_csv())
            return EXIT_OK

        if args.command == "converge-time":
            report = drivers.converge_time(
                config, args.dts, args.reference_dt, args.horizon, threads=args.threads
            )
            for dt, e in zip(report.labels, report.errors):
                print(f"dt {dt:>9.3g}: rel l2 error {e:.6e}")
            print(f"observed temporal order: {report.order:.3f}")
            if args.out:
                path = os.path.join(args.out, "converge_time.csv")
                os.makedirs(args.out, exist_ok=True)
                with open(path, "w") as fh:
                    fh.write(report.to_csv())
            return EXIT_OK

        if args.command == "bench-precond":
            rows = drivers.bench_precond(config, steps=args.steps, dt=args.dt, threads=args.threads)
            print(drivers.BENCH_HEADER)
            for row in rows:
                print(row.to_csv())
            if args.out:
                _write_table(rows, drivers.BENCH_HEADER, os.path.join(args.out, "bench_precond.csv"))
            return EXIT_OK

        if args.command == "bench-scale":
            rows = drivers.bench_scale(
                config, args.thread_list, steps=args.steps, dt=args.dt, mode=args.mode
            )
            print(drivers.BENCH_HEADER)
            for row in rows:
                print(row.to_csv())
            if args.out:
                _write_table(rows, drivers.BENCH_HEADER, os.path.join(args.out, "bench_scale.csv"))
            return EXIT_OK
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverStallError as err:
        print(f"solver stall: {err}", file=sys.stderr)
        return EXIT_STALL
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
