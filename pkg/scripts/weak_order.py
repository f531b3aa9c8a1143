"""Weak error of E|U(T)|^2 on the Ornstein-Uhlenbeck model under dt refinement.

    python scripts/weak_order.py --paths 10000 --dts 0.02 0.01 0.005 0.0025
"""

import argparse

import numpy as np

from bilinsde import make_linear
from bilinsde.sde import weak_error_linear


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--dts", type=float, nargs="+", default=[0.02, 0.01, 0.005, 0.0025])
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--scheme", default="semi_implicit")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = make_linear(2)
    errs = []
    print("dt         error        se         ratio")
    for dt in args.dts:
        w = weak_error_linear(model, np.zeros(2), args.T, dt, args.paths, seed=args.seed, scheme=args.scheme)
        ratio = "" if not errs else f"{errs[-1] / w.error:.3f}"
        errs.append(w.error)
        print(f"{dt:<10g} {w.error:+.6f}   {w.se:.2e}   {ratio}")
    order = np.polyfit(np.log(args.dts), np.log(np.abs(errs)), 1)[0]
    print(f"fitted weak order {order:.3f}")


if __name__ == "__main__":
    main()
