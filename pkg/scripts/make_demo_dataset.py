#!/usr/bin/env python3
"""Write synthetic NSL-KDD-format train/test files for demo runs without the real data."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from fedft.synthetic import generate_nslkdd_like


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data", help="destination directory (default: data)")
    parser.add_argument("--train-rows", type=int, default=30000)
    parser.add_argument("--test-rows", type=int, default=9000)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train = out / "demo_train.txt"
    test = out / "demo_test.txt"
    train.write_bytes(generate_nslkdd_like(args.train_rows, seed=args.seed))
    test.write_bytes(generate_nslkdd_like(args.test_rows, seed=args.seed + 1))
    print(f"wrote {train} ({args.train_rows} rows) and {test} ({args.test_rows} rows)")
    print("point dataset.train_path/test_path at these files in your config")
    return 0


if __name__ == "__main__":
    sys.exit(main())
