"""Ablation on a synthetic dataset: Full, R1, R2, R3 under LOSO.

Generates the benchmark dataset for ``--seed`` and runs every variant with
the benchmark training config, printing mean and population STD per variant.

    python scripts/ablation.py --seed 0 --seeds 3 --jobs 4
"""
import argparse
from dataclasses import replace

from tann.benchmark import BENCH_MODEL, BENCH_SYNTH, BENCH_TRAIN
from tann.data import generate_synthetic
from tann.evaluation import mean_std, run_ablation
from tann.model import VARIANTS
from tann.montage import load_montage


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0, help="dataset seed")
    ap.add_argument("--seeds", type=int, default=1, help="training seeds per variant")
    ap.add_argument("--epochs", type=int, default=BENCH_TRAIN.epochs)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    m = load_montage()
    ds = generate_synthetic(replace(BENCH_SYNTH, seed=args.seed), m)
    cfg = replace(BENCH_TRAIN, epochs=args.epochs)
    seeds = list(range(args.seeds))
    results = run_ablation(ds, "loso", cfg, BENCH_MODEL, m, variants=VARIANTS, seeds=seeds, jobs=args.jobs)
    for k, v in enumerate(VARIANTS):
        accs = [f.accuracy for r in results[k * len(seeds):(k + 1) * len(seeds)] for f in r.folds]
        mu, sd = mean_std(accs)
        print(f"{v:5s} {100 * mu:6.2f} +/- {100 * sd:5.2f}")


if __name__ == "__main__":
    main()
