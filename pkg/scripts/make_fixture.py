"""Regenerate the bundled 200-passage planted-answer fixture."""

import argparse
import sys
from pathlib import Path

from posbias import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=ROOT / "fixtures" / "synthetic200")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    argv = [
        "ingest", "--synthetic", "--n-queries", "20", "--passages-per-query", "10", "--length", "30",
        "--query-length", "3", "--filler-vocab", "200", "--answer-position", "0.0",
        "--seed", str(args.seed), "--out", str(args.out),
    ]
    return cli.main(argv)


if __name__ == "__main__":
    sys.exit(main())
