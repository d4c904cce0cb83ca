#!/usr/bin/env python3
"""Recompute accuracy, error rate, NPV and PPV from published confusion counts.

Prints every row whose recomputed values differ from the printed ones after
two-decimal half-up rounding.  Feature-method groups print NPV and PPV in
swapped columns; ``--no-swap`` shows what happens if that is ignored.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from published_tables import all_rows  # noqa: E402
from wqad.evaluate import ConfusionMatrix, display, metrics  # noqa: E402


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--no-swap", action="store_true", help="compare NPV/PPV columns as printed")
    args = ap.parse_args()
    total = bad = 0
    for group, swapped, (label, tn, fn, fp, tp, acc, err, npv, ppv) in all_rows():
        total += 1
        r = metrics(ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn))
        if swapped and not args.no_swap:
            npv, ppv = ppv, npv
        want = tuple("n/a" if x is None else f"{x:.2f}" for x in (acc, err, npv, ppv))
        got = tuple(display(x) for x in (r.accuracy, r.error_rate, r.npv, r.ppv))
        if got != want:
            bad += 1
            print(f"{group:<28} {label:<40} computed {got} printed {want}")
    print(f"{total - bad}/{total} rows reproduce")


if __name__ == "__main__":
    main()
