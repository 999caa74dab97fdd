#!/usr/bin/env python3
"""Run the acceptance suite and print one PASS/FAIL line per criterion.

    python3 scripts/run_acceptance.py [--fast]

``--fast`` skips the criteria marked slow (the Monte-Carlo comparison).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fast", action="store_true", help="skip tests marked slow")
    args = ap.parse_args(argv)
    opts = [str(ROOT / "tests" / "test_acceptance.py"), "-q", "-s", "-p", "no:cacheprovider"]
    if args.fast:
        opts += ["-m", "not slow"]
    return int(pytest.main(opts))


if __name__ == "__main__":
    sys.exit(main())
