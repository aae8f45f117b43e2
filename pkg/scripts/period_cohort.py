"""Validation score against EEG chunk length on a cohort whose trait lives only in
periodic EEG bursts, optionally followed by a TPE search.

    python3 scripts/period_cohort.py --lengths 40,100,250,500 --search
"""

import argparse

from traitalign import ndcore as nd
from traitalign.search import TpeConfig, loso_validate, optimize_chunk_length
from traitalign.synthdata import CohortSpec, generate_cohort
from traitalign.training import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--period", type=int, default=200)
    ap.add_argument("--effect", type=float, default=3.0)
    ap.add_argument("--seeds", type=int, default=1)
    ap.add_argument("--lengths", default="40,100,250,500")
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--search", action="store_true", help="also run a 10-trial TPE search per seed")
    args = ap.parse_args()
    nd.set_check_mode("release")
    lengths = [int(v) for v in args.lengths.split(",")]
    for seed in range(args.seeds):
        cohort = generate_cohort(CohortSpec(burst_period=args.period, eeg_effect=args.effect, fmri_effect=0.0, seed=seed))
        cfg = RunConfig(seed=seed, fmri_chunk=40)
        scores = [loso_validate(cohort, {"eeg": L, "fmri": 40}, cfg, folds=args.folds) for L in lengths]
        print(f"seed {seed}: " + "  ".join(f"L={L}: {s:.3f}" for L, s in zip(lengths, scores)), flush=True)
        if args.search:
            tpe = TpeConfig(budget=10, n_startup=6, bounds={"eeg": (32, 1000)}, seed=seed, cv_folds=args.folds)
            best, _ = optimize_chunk_length(cohort, cfg, tpe)
            print(f"seed {seed}: TPE picks L_eeg={best['eeg']} (period {args.period})", flush=True)


if __name__ == "__main__":
    main()
