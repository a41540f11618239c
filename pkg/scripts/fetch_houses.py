#!/usr/bin/env python3
"""Fetch the OpenML Houses table (dataset id 823) and write houses.csv.

Usage::

    python scripts/fetch_houses.py [DEST_DIR]

DEST_DIR defaults to $TOKENWALK_DATA_DIR, else ./data.  The script downloads
the ARFF export over HTTPS, converts it to a plain numeric CSV with a header
row, and writes ``houses.csv`` into DEST_DIR.  Needs network access; the
repository also ships a 256-row synthetic sample (data/houses_sample.csv)
with the same schema for offline smoke runs.
"""

from __future__ import annotations

import csv
import os
import sys
import urllib.request
from pathlib import Path

ARFF_URL = "https://www.openml.org/data/download/52592/openml_phpmcqKX6"
LABEL = "median_house_value"


def parse_arff(text: str) -> tuple[list[str], list[list[str]]]:
    names: list[str] = []
    rows: list[list[str]] = []
    in_data = False
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("%"):
            continue
        low = line.lower()
        if low.startswith("@attribute"):
            names.append(line.split()[1].strip("'\""))
        elif low.startswith("@data"):
            in_data = True
        elif in_data:
            rows.append([c.strip() for c in line.split(",")])
    return names, rows


def main(argv: list[str]) -> int:
    dest = Path(argv[1]) if len(argv) > 1 else Path(
        os.environ.get("TOKENWALK_DATA_DIR", "data")
    )
    dest.mkdir(parents=True, exist_ok=True)
    out = dest / "houses.csv"
    print(f"downloading {ARFF_URL} ...", file=sys.stderr)
    with urllib.request.urlopen(ARFF_URL, timeout=120) as resp:
        text = resp.read().decode("utf-8")
    names, rows = parse_arff(text)
    if LABEL not in names:
        print(f"unexpected schema {names}; expected a {LABEL} column", file=sys.stderr)
        return 1
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows(rows)
    print(f"wrote {out} ({len(rows)} rows)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
