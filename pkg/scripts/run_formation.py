"""Run the 10-agent formation scenario with and without the safety filter.

    python scripts/run_formation.py [--out runs/formation]

Writes one run directory per variant and prints the outcome of each.
"""

import argparse
from pathlib import Path

from bncbf.scenario import load_scenario, run, write_log


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/formation")
    ap.add_argument("--scenario", default="formation")
    args = ap.parse_args()
    sc = load_scenario(args.scenario)
    for label, bypass in (("filtered", False), ("bypass", True)):
        log = run(sc, filter_bypass=bypass)
        st = write_log(log, Path(args.out) / label)["stats"]
        first = log.violations[0] if log.violations else None
        print(
            f"{label:9s} min h_g {st['min_h_g']:+.4f}  max goal error {st['max_goal_error']:.4f} m  "
            f"violations {st['violations']}  faults {st['faults']}  "
            f"active set {st['active_set']['mean']:.2f} +- {st['active_set']['std']:.2f}"
            + (f"  first violation t={first['time']:.1f} s {first['leaves']}" if first else "")
        )


if __name__ == "__main__":
    main()
