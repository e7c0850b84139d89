#!/usr/bin/env python3
"""Recompute cross-model comparison statistics from the shipped error table.

Reads the packaged 85-dataset, 13-model error matrix and prints each model's
mean rank, "no. best" count, and MPCE, plus the Nemenyi critical difference.
Optionally writes the pairwise Wilcoxon p-value table and a CD diagram SVG.

This is a thin driver over `grufcn compare`; it exists so the reproduction is
a one-liner from a fresh checkout:

    python scripts/reproduce_published_stats.py --out stats/
"""

import argparse
from pathlib import Path

from grufcn import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[1])
    parser.add_argument("--out", default="stats", help="output directory")
    parser.add_argument("--missing-mode", choices=("exclude", "worst"),
                        default="exclude")
    parser.add_argument("--alpha", type=float, default=0.05)
    args = parser.parse_args()

    code = cli.main([
        "compare",
        "--missing-mode", args.missing_mode,
        "--alpha", str(args.alpha),
        "--out", args.out,
    ])
    if code == 0:
        out = Path(args.out)
        print(f"wrote {out / 'wilcoxon_pvalues.csv'} and {out / 'cd_diagram.svg'}")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
