"""Monte-Carlo g3(0) versus number of cascaded stages, against the (3!)^n law.

    python3 scripts/superbunching_law.py --stages 0 1 2 --duration 60
"""

import argparse
import time

from superbunch.coherence import gN_zero
from superbunch.coincidence import analyze
from superbunch.model import PS_PER_S, TWO_PI, SourceConfig
from superbunch.source import simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--stages", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--duration", type=float, default=60.0, help="simulated seconds per point")
    ap.add_argument("--bandwidth-hz", type=float, default=5e3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    bw = TWO_PI * args.bandwidth_hz
    tau_c = TWO_PI / bw * PS_PER_S
    bin_ps = int(round(tau_c / 20))
    print(f"{'n':>2} {'theory':>7} {'centre':>8} {'+-':>6} {'t1=t3 ratio':>12} {'secs':>5}")
    for n in args.stages:
        t0 = time.time()
        cfg = SourceConfig(n_stages=n, bandwidths=(bw,) * n, duration=args.duration, seed=args.seed)
        res = analyze(*simulate(cfg), bin_ps, 100 * bin_ps, tau_c)
        s = res.summary
        print(f"{n:>2} {gN_zero(3, n):>7} {s['center']:>8.2f} {res.errors['center']:>6.2f} "
              f"{s['slices']['t1_eq_t3']['ratio']:>12.2f} {time.time() - t0:>5.1f}")


if __name__ == "__main__":
    main()
