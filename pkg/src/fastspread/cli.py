"""Command-line entry point: ``fastspread <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import replace

from . import diagnostics as dg
from . import harness
from .evolve import run
from .fields import ParameterError
from .oracle import compare_runs, fd_run, reduce_grid


def _cmd_simulate(args):
    spec = harness.parse_config(args.config)
    report = harness.run_experiment(spec, args.out)
    for e in report.get("events", []):
        print(f"event {e['kind']} at t={e['t']:.6g}: {e['detail']}")
    print(f"summary written to {args.out or spec.output.dir}/summary.json")
    return 0


def _cmd_kernel_check(args):
    times = args.times or harness.EXPERIMENT_PARAMS[harness.KERNEL_CHECK]["times"]
    amps = args.amplitudes or harness.EXPERIMENT_PARAMS[harness.KERNEL_CHECK]["amplitudes"]
    rows = harness.kernel_check_rows(times, amps, dim=args.dim)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(harness.KERNEL_CHECK_COLUMNS)
    for r in rows:
        w.writerow([repr(float(r[c])) for c in harness.KERNEL_CHECK_COLUMNS])
    return 0


def _cmd_search(args):
    spec = harness.parse_config(args.config)
    if spec.kind not in (harness.SUPPRESSION, harness.QUENCH_SEARCH):
        print(f"search needs a threshold experiment, got {spec.kind}", file=sys.stderr)
        return 2
    report = harness.run_experiment(spec, args.out)
    s = report["search"]
    for v in s["verdicts"]:
        print(f"A={v['amplitude']:.6g} {'pass' if v['passed'] else 'fail'}: {v['reason']}")
    lo, hi = s["bracket"]
    print(f"A0_estimate={s['A0_estimate']:.6g} bracket=[{lo:.6g}, {hi:.6g}] converged={s['converged']}")
    if not s["monotone"]:
        print("warning: verdicts are not monotone in the amplitude", file=sys.stderr)
    return 0


def _cmd_oracle(args):
    spec = harness.parse_config(args.config)
    grid = reduce_grid(spec.config.grid, args.n)
    t_end = spec.config.t_end
    times = tuple(spec.config.snapshot_times) or (t_end / 4, t_end / 2, t_end)
    cfg = replace(spec.config, grid=grid, adaptive_box=False, snapshot_times=times,
                  stop_on=dg.TERMINAL_KINDS)
    initial = spec.initial.build(grid)
    spectral = run(cfg, initial)
    fd = fd_run(cfg, initial)
    shared = [t for t, _ in fd.snapshots if any(abs(t - s) <= 1e-9 * max(1.0, t) for s, _ in spectral.snapshots)]
    rows = compare_runs(spectral, fd, shared)
    cols = ("t", "mass_spectral", "mass_fd", "linf_spectral", "linf_fd", "rel_l2_gap")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(float(r[c])) for c in cols])
    for name, traj in (("spectral", spectral), ("fd", fd)):
        for e in traj.events:
            print(f"# {name} event {e.kind} at t={e.t:.6g}: {e.detail}")
    worst = max((r["rel_l2_gap"] for r in rows), default=math.nan)
    if not worst <= args.tol:
        print(f"# oracle disagreement: relative l2 gap {worst:.3g} > {args.tol:g}", file=sys.stderr)
        return 1
    return 0


def _cmd_fit(args):
    records = dg.read_records_csv(args.records)
    slope = dg.decay_fit(records, args.tmin, args.tmax, args.quantity)
    print(f"exponent={slope!r}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="fastspread", description="Spreading-flow PDE laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the experiment described by a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_simulate)

    k = sub.add_parser("kernel-check", help="print kernel defects as CSV")
    k.add_argument("--dim", type=int, default=2, choices=(2, 3))
    k.add_argument("--times", type=float, nargs="+")
    k.add_argument("--amplitudes", type=float, nargs="+")
    k.set_defaults(func=_cmd_kernel_check)

    q = sub.add_parser("search", help="amplitude threshold search")
    q.add_argument("--config", required=True)
    q.add_argument("--out", default=None)
    q.set_defaults(func=_cmd_search)

    o = sub.add_parser("oracle", help="replay a config at reduced resolution against finite differences")
    o.add_argument("--config", required=True)
    o.add_argument("--n", type=int, default=64)
    o.add_argument("--tol", type=float, default=0.05)
    o.set_defaults(func=_cmd_oracle)

    f = sub.add_parser("fit", help="power-law decay exponent from a records CSV")
    f.add_argument("--records", required=True)
    f.add_argument("--quantity", default="l2", choices=("l2", "linf"))
    f.add_argument("--tmin", type=float, required=True)
    f.add_argument("--tmax", type=float, required=True)
    f.set_defaults(func=_cmd_fit)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, harness.UsageError, ParameterError, dg.FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (harness.BracketError, dg.ConsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
