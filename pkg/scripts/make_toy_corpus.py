#!/usr/bin/env python3
"""Generate the synthetic 2-speaker toy corpus used by the smoke pipeline.

Usage: python scripts/make_toy_corpus.py OUTPUT_DIR [--speakers N] [--utterances M]
"""

import argparse
from pathlib import Path

from voiceclone.toydata import make_toy_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("output", type=Path)
    parser.add_argument("--speakers", type=int, default=2)
    parser.add_argument("--utterances", type=int, default=50)
    parser.add_argument("--seconds", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rows = make_toy_corpus(
        args.output,
        n_speakers=args.speakers,
        utterances_per_speaker=args.utterances,
        seconds=args.seconds,
        seed=args.seed,
    )
    print(f"wrote {len(rows)} utterances under {args.output}")


if __name__ == "__main__":
    main()
