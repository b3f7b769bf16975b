"""Members and predicted accuracy of latency-constrained ensembles across budgets.

For each held-out task, fits the nCRPS surrogate on the rest and sweeps
the latency budget; reports member count, total latency and the true
nCRPS of the best member picked (forecast files are not needed).

    python3 scripts/ensemble_budget_sweep.py --budgets 1,5,20,100,none
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from mo_defaults.eval_store import fit_standardizer, load_evaluations
from mo_defaults.forecast import InfeasibleBudget, constrained_ensemble_select
from mo_defaults.surrogate import TrainConfig, make_predictor, nonparametric_baseline, train_surrogate
from mo_defaults.synthetic import SyntheticSpec, make_synthetic_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--corpus")
    p.add_argument("--budgets", default="1,2,5,10,20,50,100,none", help="milliseconds, or 'none'")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--out", default="runs/ensemble_sweep.csv")
    args = p.parse_args()

    corpus = (load_evaluations(args.corpus) if args.corpus
              else make_synthetic_corpus(SyntheticSpec()))
    budgets = [None if b == "none" else float(b) for b in args.budgets.split(",")]
    k_err = corpus.objective_index("ncrps")
    rows = []
    for task in corpus.task_ids:
        train = corpus.drop_task(task).select_objectives(["ncrps", "latency"])
        single = train.select_objectives(["ncrps"])
        std = fit_standardizer(single)
        predict = make_predictor(train_surrogate(single, TrainConfig(epochs=args.epochs), std), single.schema, std)
        candidates = train.configs()
        predicted = predict(candidates)[:, 0]
        latency_ms = nonparametric_baseline(train)(candidates)[:, 1] * 1000.0
        truth = dict(zip(*corpus.task_table(task)))
        for budget in budgets:
            try:
                spec = constrained_ensemble_select(list(zip(candidates, predicted, latency_ms)), budget)
            except InfeasibleBudget:
                rows.append([task, budget, 0, "", ""])
                continue
            true_best = min(truth[c][k_err] for c in spec.members if c in truth)
            rows.append([task, budget, len(spec.members), spec.total_latency, true_best])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "budget_ms", "members", "total_latency_ms", "best_member_true_ncrps"])
        w.writerows(rows)

    print("budget_ms  feasible  mean_members  median_best_ncrps")
    for budget in budgets:
        sel = [r for r in rows if r[1] == budget]
        ok = [r for r in sel if r[2]]
        med = np.median([r[4] for r in ok]) if ok else float("nan")
        print(f"{str(budget):<10} {len(ok):>3}/{len(sel):<4} {np.mean([r[2] for r in sel]):>10.2f}  {med:.4g}")


if __name__ == "__main__":
    main()
