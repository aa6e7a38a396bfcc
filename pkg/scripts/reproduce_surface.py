"""Simulate a two-stage source, build the coincidence surface and fit both slices.

Writes the pipeline outputs (streams, surface/slice CSVs, fits) under --out and
prints the measured values next to the ideal-model ones.

    python3 scripts/reproduce_surface.py --out runs/two_stage
"""

import argparse
import sys

from superbunch import cli
from superbunch.formats import read_json


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/two_stage")
    ap.add_argument("--stages", type=int, default=2)
    ap.add_argument("--duration", type=float, default=150.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    code = cli.main(["pipeline", "--stages", str(args.stages), "--duration", str(args.duration),
                     "--seed", str(args.seed), "--threads", str(args.threads), "--out", args.out])
    if code not in (cli.EXIT_OK, cli.EXIT_FIT):
        sys.exit(code)
    s = read_json(f"{args.out}/analysis/summary.json")
    n = args.stages
    print()
    print(f"{'quantity':<24}{'measured':>10}{'ideal':>8}")
    print(f"{'centre g3':<24}{s['center']:>10.2f}{6 ** n:>8}")
    print(f"{'t1=t3 slice ratio':<24}{s['slices']['t1_eq_t3']['ratio']:>10.2f}{3 ** n:>8}")
    for model, ideal in (("eq5", 6 ** n), ("eq4", 3 ** n)):
        f = read_json(f"{args.out}/fit_{model}.json")
        print(f"{'fit ' + model + ' g3_zero':<24}{f['g3_zero']:>10.2f}{ideal:>8}")
    sys.exit(code)


if __name__ == "__main__":
    main()
