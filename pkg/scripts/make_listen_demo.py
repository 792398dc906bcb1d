#!/usr/bin/env python3
"""Generate demo audio assets plus the default 20-sentence listening plan.

Serve it afterwards with:
    voiceclone serve --workdir WORKDIR --plan listen-demo/plan.json --data listen-data

Usage: python scripts/make_listen_demo.py OUTPUT_DIR
"""

import argparse
from pathlib import Path

from voiceclone.toydata import make_listen_demo


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("output", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    plan, plan_path = make_listen_demo(args.output, seed=args.seed)
    counts = plan.scenario_counts()
    print(f"wrote {len(plan)} items across {len(counts)} scenarios to {plan_path}")


if __name__ == "__main__":
    main()
