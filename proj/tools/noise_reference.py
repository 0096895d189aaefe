#!/usr/bin/env python3
"""Pure-Python counter-based Gaussian generator.

Reproduces idpose's gaussian_at(seed, index) bit for bit, for servers that
must regenerate the engine's noise. With --check FILE it verifies a
seed,index,value CSV written by `idpose noise-vectors`.
"""

import argparse
import csv
import math
import sys

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def counter_hash(key, counter):
    z = (key + ((counter + 1) * GOLDEN & MASK)) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def gaussian_at(seed, index):
    a = counter_hash(seed, 2 * index)
    b = counter_hash(seed, 2 * index + 1)
    u1 = ((a >> 11) + 1.0) * 2.0**-53
    u2 = (b >> 11) * 2.0**-53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def check(path):
    total = mismatched = 0
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            total += 1
            expected = float(row["value"])
            got = gaussian_at(int(row["seed"]), int(row["index"]))
            if got != expected:
                mismatched += 1
                print(f"mismatch seed={row['seed']} index={row['index']}: "
                      f"{got!r} != {expected!r}", file=sys.stderr)
    print(f"{total - mismatched}/{total} entries match")
    return 0 if total > 0 and mismatched == 0 else 1


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--check", metavar="CSV")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--count", type=int, default=8)
    args = parser.parse_args()
    if args.check:
        return check(args.check)
    for i in range(args.count):
        print(f"{args.seed},{i},{gaussian_at(args.seed, i)!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
