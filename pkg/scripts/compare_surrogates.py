"""Ranking quality (MRR, NDCG, Precision@k) of each surrogate under leave-one-task-out.

    python3 scripts/compare_surrogates.py --seeds 5 --out runs/surrogates.csv
"""

import argparse
import csv
import logging
from pathlib import Path

from mo_defaults.eval_store import load_evaluations
from mo_defaults.selector import SURROGATE_KINDS, surrogate_ranking_loocv
from mo_defaults.surrogate import TrainConfig
from mo_defaults.synthetic import SyntheticSpec, make_synthetic_corpus

COLUMNS = ("mrr", "ndcg", "precision@5", "precision@10", "precision@20")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--corpus", help="evaluation table; the synthetic corpus is used when omitted")
    p.add_argument("--objective", default="ncrps")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--kinds", default=",".join(SURROGATE_KINDS))
    p.add_argument("--out", default="runs/surrogates.csv")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    if args.corpus:
        corpus = load_evaluations(args.corpus, (args.objective,))
    else:
        corpus = make_synthetic_corpus(SyntheticSpec()).select_objectives([args.objective])
    cfg = TrainConfig(epochs=args.epochs)
    rows = []
    for kind in args.kinds.split(","):
        res = surrogate_ranking_loocv(corpus, kind, seeds=tuple(range(args.seeds)), cfg=cfg)
        rows.append({"surrogate": kind, **res})
        print(f"{kind:<24}" + "".join(f"{c}={100 * res.get(c, float('nan')):6.2f}  " for c in COLUMNS))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["surrogate", *COLUMNS], extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
