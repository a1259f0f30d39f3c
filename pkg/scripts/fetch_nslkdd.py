#!/usr/bin/env python3
"""Download the NSL-KDD train/test files into data/ and sanity-check them.

Needs general network access; tries a few well-known mirrors. Place the
files manually (data/KDDTrain+.txt, data/KDDTest+.txt) when offline.
"""

from __future__ import annotations

import argparse
import sys
import urllib.request
from pathlib import Path

MIRRORS = [
    "https://raw.githubusercontent.com/defcom17/NSL_KDD/master/{name}",
    "https://raw.githubusercontent.com/jmnwong/NSL-KDD-Dataset/master/{name}",
    "https://raw.githubusercontent.com/HoaNP/NSL-KDD-DataSet/master/{name}",
]

EXPECTED_ROWS = {"KDDTrain+.txt": 125973, "KDDTest+.txt": 22543}


def fetch(name: str, dest: Path) -> None:
    last_error: Exception | None = None
    for mirror in MIRRORS:
        url = mirror.format(name=name.replace("+", "%2B"))
        try:
            print(f"trying {url}")
            with urllib.request.urlopen(url, timeout=60) as resp:
                data = resp.read()
            rows = sum(1 for line in data.splitlines() if line.strip())
            if rows != EXPECTED_ROWS[name]:
                raise ValueError(f"{name}: got {rows} rows, expected {EXPECTED_ROWS[name]}")
            dest.write_bytes(data)
            print(f"wrote {dest} ({rows} rows)")
            return
        except Exception as exc:  # try the next mirror
            last_error = exc
            print(f"  failed: {exc}")
    raise SystemExit(f"could not fetch {name}: {last_error}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data", help="destination directory (default: data)")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in EXPECTED_ROWS:
        dest = out / name
        if dest.exists():
            print(f"{dest} already present, skipping")
            continue
        fetch(name, dest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
