"""Empirical P(lambda_min >= eps) of the Malliavin matrix for forced and underforced triads.

    python scripts/spectral_tail.py --paths 500 --T 1
"""

import argparse
import warnings

import numpy as np

from bilinsde import make_triad, spectral_tail


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=500)
    ap.add_argument("--T", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    ap.add_argument("--dt", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    eps = np.logspace(-8, 0, 9)
    cases = {"e1,e2": (make_triad(), np.zeros(3)), "e1 only": (make_triad(forced_axes=(1,)), np.array([1.0, 0, 0]))}
    print("eps: " + " ".join(f"{e:8.0e}" for e in eps))
    for label, (model, U0) in cases.items():
        for T in args.T:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                st = spectral_tail(model, U0, T, args.dt, args.paths, eps, seed=args.seed)
            probs = " ".join(f"{p:8.3f}" for p in st.prob)
            print(f"{label:8s} T={T:<4g} {probs}   tail exponent {st.tail_exponent:.2f}")


if __name__ == "__main__":
    main()
