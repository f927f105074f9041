"""Follower-count sweep: distance-QP counts, active-set size and solve times.

    python scripts/sweep_followers.py [--duration 20] [--out runs/sweep]

The counts are structural. Times depend on the machine; only their growth
with the number of followers is meaningful.
"""

import argparse
import sys

from bncbf.cli import main as cli

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", default="20")
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--broad-phase", action="store_true")
    args = ap.parse_args()
    argv = ["sweep", "--scenario", "formation", "--out", args.out, "--duration", args.duration]
    if args.broad_phase:
        argv.append("--broad-phase")
    sys.exit(cli(argv))
