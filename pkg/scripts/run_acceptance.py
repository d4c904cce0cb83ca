#!/usr/bin/env python3
"""Run the acceptance suite and print one PASS/FAIL line per criterion.

    python3 scripts/run_acceptance.py [-k PATTERN]

Exit status is pytest's (0 when every criterion passes).
"""

import argparse
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-k", default=None, help="only run criteria matching this pytest expression")
    args = ap.parse_args()
    argv = [str(ROOT / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider"]
    if args.k:
        argv += ["-k", args.k]
    code = pytest.main(argv)
    sys.path.insert(0, str(ROOT / "tests"))
    from test_acceptance import RESULTS

    print()
    for n in sorted(RESULTS):
        print(RESULTS[n])
    return int(code)


if __name__ == "__main__":
    sys.exit(main())
