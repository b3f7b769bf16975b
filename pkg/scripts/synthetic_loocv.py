"""Hypervolume-error curves of every selection method on the synthetic corpus.

Writes one sub-directory per method (curves.csv, summary.json) under --out
plus a combined curves table, and prints the mean error at each n.

    python3 scripts/synthetic_loocv.py --out runs/synthetic_loocv --seeds 5
"""

import argparse
import csv
import logging
import time
from pathlib import Path

from mo_defaults.selector import METHODS, loocv
from mo_defaults.surrogate import TrainConfig
from mo_defaults.synthetic import SyntheticSpec, make_synthetic_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/synthetic_loocv")
    p.add_argument("--tasks", type=int, default=12)
    p.add_argument("--configs", type=int, default=60)
    p.add_argument("--corpus-seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--num-defaults", type=int, default=10)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--methods", default=",".join(METHODS))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    corpus = make_synthetic_corpus(SyntheticSpec(n_tasks=args.tasks, n_configs=args.configs,
                                                 seed=args.corpus_seed))
    out = Path(args.out)
    cfg = TrainConfig(epochs=args.epochs)
    seeds = list(range(args.seeds))
    results = {}
    for method in args.methods.split(","):
        t0 = time.perf_counter()
        res = loocv(corpus, method, args.num_defaults, seeds, cfg)
        res.write(out / method)
        results[method] = res
        logging.info("%s done in %.1f s", method, time.perf_counter() - t0)

    with (out / "mean_curves.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "n", "mean_hv_error", "std_hv_error"])
        for method, res in results.items():
            for n, (mu, sd) in enumerate(zip(res.mean_curve, res.std_curve), start=1):
                w.writerow([method, n, repr(float(mu)), repr(float(sd))])

    print("method     " + " ".join(f"n={n:<5d}" for n in range(1, args.num_defaults + 1)))
    for method, res in results.items():
        print(f"{method:<10} " + " ".join(f"{v:.4f}" for v in res.mean_curve))


if __name__ == "__main__":
    main()
