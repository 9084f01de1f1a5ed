"""Cost and accuracy of one minimum-norm run against fixed-budget bisection on a trained rings MLP."""

import argparse
import time

import numpy as np

from hofmn.attack import baseline_config, fmn_run
from hofmn.evaluation import FixedBudgetConfig, bisect_fixed_budget, compare_report
from hofmn.model import make_rings, train_adversarial


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--bisection-steps", type=int, default=5)
    args = ap.parse_args()

    train = make_rings(600, args.seed)
    model = train_adversarial(train, (2, 32, 32, 3), epochs=60, lr=0.3, eps_train=0.03, pgd_steps=5,
                              seed=args.seed)
    data = make_rings(args.n, args.seed + 1)
    fb = FixedBudgetConfig()

    t0 = time.perf_counter()
    fmn = fmn_run(model, data.X, data.y, baseline_config(200))
    t1 = time.perf_counter()
    bis = bisect_fixed_budget(model, data.X, data.y, fb, 0.0, 32 / 255, args.bisection_steps)
    t2 = time.perf_counter()

    rows = compare_report(fmn.best_norm, bis, fb.steps, fmn.steps)
    print(f"wall time: fmn {t1 - t0:.2f}s, bisection {t2 - t1:.2f}s")
    print("method       median_norm  attack_steps")
    for r in rows:
        print(f"{r.method:<11}  {r.median_norm:>11.5f}  {r.attack_steps:>12}")
    both = bis.found & fmn.success
    print(f"FMN norm <= bisection upper bound on {np.mean(fmn.best_norm[both] <= bis.hi[both] + 1e-6):.0%} "
          f"of {both.sum()} samples found by both")


if __name__ == "__main__":
    main()
