"""Command-line front end: ``bncbf {validate,run,stats,sweep}``.

Exit status is 0 only when the command found no safety violations and no
solver faults.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .scenario import (
    ScenarioError,
    load_scenario,
    read_log,
    run,
    stats,
    sweep,
    validate,
    write_log,
)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON file or builtin name (formation, pool)")
    p.add_argument("--dt", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--eps1", type=float)
    p.add_argument("--eps2", type=float)
    p.add_argument("--alpha-slope", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--filter-bypass", action="store_true", default=None)
    p.add_argument("--broad-phase", action="store_true", default=None)


def _scenario(args):
    sc = load_scenario(args.scenario)
    return sc.with_overrides(
        dt=args.dt,
        duration=args.duration,
        eps1=args.eps1,
        eps2=args.eps2,
        alpha_slope=args.alpha_slope,
        seed=args.seed,
        filter_bypass=args.filter_bypass,
        broad_phase=args.broad_phase,
    )


def _progress(k: int, n: int) -> None:
    if k == n or k % 20 == 0:
        print(f"\r  step {k}/{n}", end="\n" if k == n else "", file=sys.stderr, flush=True)


def cmd_validate(args) -> int:
    report = validate(_scenario(args))
    print(report)
    return 0 if report.ok else 1


def cmd_run(args) -> int:
    sc = _scenario(args)
    report = validate(sc)
    if not report.ok:
        print(report)
        return 1
    log = run(sc, progress=None if args.quiet else _progress)
    summary = write_log(log, args.out)
    st = summary["stats"]
    print(json.dumps({k: st[k] for k in ("min_h_g", "max_goal_error", "violations", "faults")}))
    return 0 if st["violations"] == 0 and st["faults"] == 0 else 2


def cmd_stats(args) -> int:
    st = stats(read_log(args.out))
    print(json.dumps(st, indent=1))
    return 0 if st["violations"] == 0 and st["faults"] == 0 else 2


SWEEP_COLUMNS = [
    ("n_followers", lambda r: r["n_followers"]),
    ("ca_qp", lambda r: r["ca_qp_per_step"]),
    ("los_qp", lambda r: r["los_qp_per_step"]),
    ("active_mean", lambda r: r["active_set"]["mean"]),
    ("active_std", lambda r: r["active_set"]["std"]),
    ("distance_ms_mean", lambda r: r["timing_ms"]["distance"]["mean"]),
    ("distance_ms_std", lambda r: r["timing_ms"]["distance"]["std"]),
    ("filter_ms_mean", lambda r: r["timing_ms"]["filter"]["mean"]),
    ("filter_ms_std", lambda r: r["timing_ms"]["filter"]["std"]),
    ("total_ms_mean", lambda r: r["timing_ms"]["total"]["mean"]),
    ("total_ms_std", lambda r: r["timing_ms"]["total"]["std"]),
    ("min_h_g", lambda r: r["min_h_g"]),
    ("violations", lambda r: r["violations"]),
    ("faults", lambda r: r["faults"]),
]


def cmd_sweep(args) -> int:
    counts = [int(c) for c in args.counts.split(",")]
    rows = sweep(_scenario(args), counts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([c for c, _ in SWEEP_COLUMNS])
        for r in rows:
            w.writerow([get(r) for _, get in SWEEP_COLUMNS])
    (out / "sweep.json").write_text(json.dumps(rows, indent=1) + "\n")
    print(f"{'N_F':>4} {'ca QP':>6} {'los QP':>7} {'|I|':>11} {'dist ms':>9} {'filter ms':>10} {'total ms':>9}")
    for r in rows:
        a, t = r["active_set"], r["timing_ms"]
        print(
            f"{r['n_followers']:>4} {r['ca_qp_per_step']:>6} {r['los_qp_per_step']:>7} "
            f"{a['mean']:>5.2f}±{a['std']:<5.2f} {t['distance']['mean']:>9.1f} "
            f"{t['filter']['mean']:>10.2f} {t['total']['mean']:>9.1f}"
        )
    bad = any(r["violations"] or r["faults"] for r in rows)
    return 2 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bncbf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", help="check a scenario and its initial state")
    _common(p)
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("run", help="simulate and write traj/barriers/timing CSV and JSON summaries")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("stats", help="recompute statistics from a run directory")
    p.add_argument("--out", required=True, help="directory written by 'run'")
    p.set_defaults(func=cmd_stats)
    p = sub.add_parser("sweep", help="follower-count sweep with per-step problem statistics")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--counts", default="2,5,7,9")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
