"""Tune every attack configuration against adversarially trained rings MLPs.

Usage: python3 scripts/run_end_to_end.py [--seeds 0 1 2 3 4] [--T 32] [--P 8] [--threads 1]
"""

import argparse

from hofmn.experiments import end_to_end, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--T", type=int, default=32)
    ap.add_argument("--P", type=int, default=8)
    ap.add_argument("--K", type=int, default=200)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    outcomes = []
    for seed in args.seeds:
        o = end_to_end(seed, T=args.T, P=args.P, K=args.K, threads=args.threads)
        print(f"seed {seed}: {o.seconds:.0f}s, ranking " + ", ".join(f"{c}={m:.4f}" for c, m in o.ranking[:3]))
        outcomes.append(o)
    print(summarize(outcomes))


if __name__ == "__main__":
    main()
