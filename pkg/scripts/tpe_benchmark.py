"""TPE vs random search on a 1-D quadratic over integer chunk lengths.

    python3 scripts/tpe_benchmark.py --seeds 50 --budget 30
"""

import argparse

from traitalign.search import TpeConfig, optimize_chunk_length, random_search
from traitalign.training import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--budget", type=int, default=30)
    ap.add_argument("--optimum", type=int, default=40)
    ap.add_argument("--lo", type=int, default=8)
    ap.add_argument("--hi", type=int, default=256)
    ap.add_argument("--bw-scale", type=float, default=0.25)
    args = ap.parse_args()

    def f(c):
        return -float((c["eeg"] - args.optimum) ** 2)

    wins = ties = 0
    for seed in range(args.seeds):
        tpe = TpeConfig(budget=args.budget, bounds={"eeg": (args.lo, args.hi)}, seed=seed, bw_scale=args.bw_scale)
        _, trials = optimize_chunk_length(None, RunConfig(), tpe, objective=f)
        a, b = max(t.score for t in trials), max(t.score for t in random_search(f, tpe))
        wins += a > b
        ties += a == b
    n = args.seeds
    print(f"TPE better on {wins}/{n}, tied on {ties}/{n}, worse on {n - wins - ties}/{n}")


if __name__ == "__main__":
    main()
