"""Compare the default attack with closed-form minimal l-inf perturbations of random linear models."""

import argparse

import numpy as np

from hofmn.attack import baseline_config, fmn_run
from hofmn.testbeds import linear_testbed


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--K", type=int, default=200)
    args = ap.parse_args()

    print("seed  within 2%  max rel err  median eps*")
    for seed in args.seeds:
        model, X, y, eps = linear_testbed(seed=seed, n=args.n)
        r = fmn_run(model, X, y, baseline_config(args.K))
        rel = np.abs(r.best_norm - eps) / eps
        print(f"{seed:>4}  {np.mean(rel <= 0.02):>9.0%}  {rel.max():>11.2e}  {np.median(eps):.4f}")


if __name__ == "__main__":
    main()
