"""Spanning levels of the constant bracket ladder on Galerkin Navier-Stokes truncations.

For each K every pair of forced modes is tried and the span dimension per
level is printed, followed by the best pair.

    python scripts/hormander_survey.py --K 2 3 --n-max 12
"""

import argparse
import itertools
import time

from bilinsde import build_W_ladder, galerkin_modes, make_galerkin_nse2d


def survey(K, n_max):
    modes = [tuple(k) for k in galerkin_modes(K) if k[0] > 0 or (k[0] == 0 and k[1] > 0)]
    rows = []
    for pair in itertools.combinations(modes, 2):
        ladder = build_W_ladder(make_galerkin_nse2d(K, forced_modes=pair), n_max)
        rows.append((pair, ladder.spanning_level, ladder.span_dim[-1]))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--n-max", type=int, default=12)
    args = ap.parse_args()
    for K in args.K:
        t0 = time.perf_counter()
        N = 4 * K * (K + 1)
        rows = survey(K, args.n_max)
        spanning = [r for r in rows if r[1] is not None]
        print(f"K={K} N={N} pairs={len(rows)} spanning={len(spanning)} ({time.perf_counter() - t0:.1f} s)")
        for pair, level, dim in rows:
            print(f"  {pair[0]} {pair[1]}  level={'-' if level is None else level}  final span={dim}")
        if spanning:
            best = min(spanning, key=lambda r: r[1])
            print(f"  best: {best[0]} spans at level {best[1]}")


if __name__ == "__main__":
    main()
