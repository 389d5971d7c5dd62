"""Command-line front end: ``qpik run|analyze|validate|gen-reference``."""

import argparse
import csv
import os
import sys
from pathlib import Path

from .docs import DocumentError
from .scenarios import (
    SchemaError,
    analyze_dir,
    fmt,
    load_scenario,
    reference_profiles,
    run,
    solve_stats,
    write_run,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_HALTED = 2

OUT_ENV = "QPIK_OUT"


def _positive(cast):
    def check(text):
        try:
            v = cast(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {cast.__name__}, got {text!r}")
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
        return v

    return check


def _nonnegative_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected int, got {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text!r}")
    return v


def _default_out(name):
    return Path(os.environ.get(OUT_ENV, "qpik_runs")) / name


def stats_line(log):
    s = solve_stats(log)
    return (
        f"ticks={len(log)} median_solve_time_ms={1e3 * s['median_solve_time']:.4f} "
        f"mean_nwsr={s['mean_nwsr']:.4f} mean_nac={s['mean_nac']:.4f} "
        f"min_distance_m={float(log.min_dist.min()):.5f} halted={log.halted_ticks}"
    )


def cmd_run(args):
    try:
        cfg = load_scenario(args.scenario).with_overrides(seed=args.seed, T_traj=args.T_traj, d_buff=args.d_buff, n_waypoints=args.waypoints)
    except (DocumentError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else _default_out(f"{cfg.name}_seed{cfg.seed}_T{cfg.T_traj:g}")
    log = run(cfg)
    write_run(log, out)
    print(stats_line(log))
    print(f"wrote {out}")
    return EXIT_HALTED if log.halted_ticks else EXIT_OK


def cmd_analyze(args):
    path = Path(args.runlog)
    if path.is_dir():
        path = path / "runlog.csv"
    out = Path(args.out) if args.out else path.parent
    try:
        log, report = analyze_dir(path, out)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for key, msg in sorted(report.errors.items()):
        print(f"{key} error: {msg}", file=sys.stderr)
    if len(log):
        print(stats_line(log))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_validate(args):
    status = EXIT_OK
    for ref in args.scenario:
        try:
            cfg = load_scenario(ref)
        except (DocumentError, ValueError) as exc:
            print(f"{ref}: invalid: {exc}", file=sys.stderr)
            status = EXIT_CONFIG
            continue
        print(f"{ref}: ok ({cfg.name}, {len(cfg.arms)} arm(s), {len(cfg.world().pairs)} pairs, hash {cfg.config_hash[:12]})")
    return status


def cmd_gen_reference(args):
    ref = reference_profiles(T=args.T, amplitude=args.amplitude, dt=args.dt, seed=args.seed)
    out = Path(args.out) if args.out else _default_out("reference")
    out.mkdir(parents=True, exist_ok=True)
    for name in ("smooth", "rough"):
        with open(out / f"{name}_reference.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "qd", "jerk"])
            for t, v, j in zip(ref["t"], ref[name], ref[f"{name}_jerk"]):
                w.writerow([fmt(t), fmt(v), fmt(j)])
    with open(out / "reference_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["profile", "max_abs_jerk"])
        w.writerow(["smooth", fmt(ref["smooth_max"])])
        w.writerow(["rough", fmt(ref["rough_max"])])
    print(f"smooth_max_jerk={ref['smooth_max']:.6g} rough_max_jerk={ref['rough_max']:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="qpik", description="QP-based inverse kinematics trajectory runs and metrics.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a bundled or user scenario")
    r.add_argument("scenario", help="bundled name (s1_floor, s2_sphere, s3_twoarm) or YAML path")
    r.add_argument("--seed", type=_nonnegative_int)
    r.add_argument("--T-traj", dest="T_traj", type=_positive(float), help="seconds per waypoint segment")
    r.add_argument("--d-buff", dest="d_buff", type=_positive(float), help="buffer distance in metres")
    r.add_argument("--waypoints", type=_positive(int), help="waypoints per arm")
    r.add_argument("--out", help=f"output directory (default under ${OUT_ENV} or ./qpik_runs)")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="recompute metric CSVs from a run log")
    a.add_argument("runlog", help="runlog.csv or a run directory")
    a.add_argument("--out", help="output directory (default: next to the log)")
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("validate", help="parse and check scenario files")
    v.add_argument("scenario", nargs="+")
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("gen-reference", help="smooth and rough jerk reference profiles")
    g.add_argument("--T", type=_positive(float), default=5.0, help="sinusoid period in seconds")
    g.add_argument("--amplitude", type=float, default=1.39, help="velocity amplitude in rad/s")
    g.add_argument("--seed", type=_nonnegative_int, default=0)
    g.add_argument("--dt", type=_positive(float), default=0.002)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_reference)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
