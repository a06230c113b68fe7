#!/usr/bin/env python3
"""
Compare CSV bodies (comment header stripped) of two files or two directories
"""
import argparse
import sys
from pathlib import Path

# Add lib to path before importing custom modules
sys.path.append(str(Path(__file__).resolve().parent.parent / "lib"))

from output import read_csv_body  # noqa: E402


def pairs(first, second):
    """(a, b) file pairs to compare; directories are matched by CSV name"""
    first, second = Path(first), Path(second)
    if first.is_dir() and second.is_dir():
        names = sorted({p.name for p in first.glob("*.csv")})
        return [(first / name, second / name) for name in names]
    return [(first, second)]


def compare(first, second):
    """Names of files whose bodies differ or are missing"""
    differing = []
    for a, b in pairs(first, second):
        if not a.exists() or not b.exists():
            differing.append(a.name)
        elif read_csv_body(a) != read_csv_body(b):
            differing.append(a.name)
    return differing


def main():
    parser = argparse.ArgumentParser(description="Byte comparison of CSV bodies")
    parser.add_argument("first", help="CSV file or directory")
    parser.add_argument("second", help="CSV file or directory")
    args = parser.parse_args()

    differing = compare(args.first, args.second)
    if differing:
        for name in differing:
            print(f"  ✗ {name} differs")
        sys.exit(1)
    print(f"Identical bodies: {args.first} == {args.second}")


if __name__ == "__main__":
    main()
