#!/usr/bin/env python3
"""Print sweep CSVs as one table per N, with every method's ratio to WMMSE
(or to the grid oracle when present)."""

import argparse
import csv
from collections import defaultdict


def read(path):
    with open(path) as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("csv", nargs="+", help="eval.csv / baseline.csv files")
    args = parser.parse_args()
    by_n = defaultdict(list)
    for path in args.csv:
        for row in read(path):
            by_n[int(row["N"])].append(row)
    for n in sorted(by_n):
        rows = by_n[n]
        ref_rows = [r for r in rows if r["method"] == "grid"] or \
                   [r for r in rows if r["method"] == "wmmse"]
        ref = float(ref_rows[0]["mean_utility"]) if ref_rows else None
        print(f"N={n}" + (f"  (reference {ref_rows[0]['method']} = {ref:.4f})" if ref else ""))
        for r in rows:
            mean = float(r["mean_utility"])
            label = r["method"] + (f" p_test={r['p_test']}" if r["p_test"] else "")
            ratio = f"{mean / ref:6.3f}x" if ref else ""
            print(f"  {label:22s} {mean:8.4f} +- {float(r['stderr']):.4f}  {ratio}")


if __name__ == "__main__":
    main()
