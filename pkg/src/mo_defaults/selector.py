"""Default-config selectors, leave-one-task-out evaluation and ranking metrics."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .eval_store import EvaluationCorpus, ModelConfig, fit_standardizer
from .moo import hypervolume, non_dominated_sort, pareto_front, quantile_normalize_columns
from .surrogate import TrainConfig, make_predictor, nonparametric_baseline, train_surrogate

logger = logging.getLogger(__name__)

Predictor = Callable[[Sequence[ModelConfig]], np.ndarray]
METHODS = ("pareto", "single", "greedy", "random", "oracle")
# Mixed into the seed sequence so that every method draws from its own stream.
_METHOD_STREAM = {name: i for i, name in enumerate(METHODS)}


@dataclass
class SelectionResult:
    configs: list[ModelConfig]
    scores: np.ndarray
    hv_errors: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class RankingReport:
    mrr: float
    ndcg: float
    precision_at: dict[int, float]


def _fit_predictor(train: EvaluationCorpus, cfg: TrainConfig) -> Predictor:
    std = fit_standardizer(train)
    params = train_surrogate(train, cfg, std)
    return make_predictor(params, train.schema, std)


def pareto_order(predicted: np.ndarray, seed) -> list[int]:
    """Full candidate order: non-dominated sort of quantile-normalized predictions."""
    return list(non_dominated_sort(quantile_normalize_columns(predicted), seed).order)


def pareto_select(train: EvaluationCorpus, candidates: Sequence[ModelConfig], n: int,
                  cfg: TrainConfig = TrainConfig(), predict: Predictor | None = None) -> SelectionResult:
    """Pick ``n`` defaults covering the predicted Pareto front.

    ``predict`` overrides the trained surrogate, e.g. with true objective
    values to obtain an oracle selector.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not candidates:
        raise ValueError("no candidates")
    predict = predict or _fit_predictor(train, cfg)
    scores = np.asarray(predict(list(candidates)), dtype=float).reshape(len(candidates), -1)
    order = pareto_order(scores, cfg.seeds()[2])[:n]
    return SelectionResult([candidates[i] for i in order], scores[order])


def single_objective_select(train: EvaluationCorpus, candidates: Sequence[ModelConfig], n: int,
                            cfg: TrainConfig = TrainConfig(), predict: Predictor | None = None,
                            objective: str | None = None) -> SelectionResult:
    """Ascending predicted score of one objective (the first by default); stable ties."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not candidates:
        raise ValueError("no candidates")
    objective = objective or train.objective_names[0]
    if predict is None:
        predict = _fit_predictor(train.select_objectives([objective]), cfg)
        column = 0
    else:
        column = train.objective_index(objective)
    scores = np.asarray(predict(list(candidates)), dtype=float).reshape(len(candidates), -1)[:, [column]]
    order = np.argsort(scores[:, 0], kind="stable")[:n]
    return SelectionResult([candidates[i] for i in order], scores[order])


def _error_matrix(train: EvaluationCorpus, candidates: Sequence[ModelConfig], k: int) -> np.ndarray:
    pos = {c: i for i, c in enumerate(candidates)}
    mat = np.full((len(train.task_ids), len(candidates)), np.inf)
    for j, task in enumerate(train.task_ids):
        configs, values = train.task_table(task)
        for c, v in zip(configs, values[:, k]):
            if c in pos:
                mat[j, pos[c]] = v
    return mat


def greedy_joint_errors(errors: np.ndarray, order: Sequence[int]) -> list[float]:
    """Joint error ``sum_j min_{i in prefix} errors[j, i]`` after each pick."""
    best = np.full(errors.shape[0], np.inf)
    out = []
    for i in order:
        best = np.minimum(best, errors[:, i])
        out.append(float(best.sum()))
    return out


def greedy_from_matrix(errors: np.ndarray, n: int) -> list[int]:
    errors = np.asarray(errors, dtype=float)
    n_cand = errors.shape[1]
    if n > n_cand:
        warnings.warn(f"n={n} exceeds {n_cand} candidates; truncating", stacklevel=3)
        n = n_cand
    best = np.full(errors.shape[0], np.inf)
    chosen: list[int] = []
    available = np.ones(n_cand, dtype=bool)
    own = np.where(np.isinf(errors), 0.0, errors).sum(axis=0)
    for _ in range(n):
        cand = np.minimum(best[:, None], errors)
        # lexicographic: fewest uncovered tasks, smallest finite joint error,
        # then the candidate's own summed error, then index
        uncovered = np.isinf(cand).sum(axis=0)
        joint = np.where(np.isinf(cand), 0.0, cand).sum(axis=0)
        key = np.where(available, joint, np.inf)
        uncovered = np.where(available, uncovered, np.iinfo(np.int64).max)
        pick = int(np.lexsort((np.arange(n_cand), own, key, uncovered))[0])
        chosen.append(pick)
        available[pick] = False
        best = np.minimum(best, errors[:, pick])
    return chosen


def greedy_model_free(train: EvaluationCorpus, candidates: Sequence[ModelConfig], n: int,
                      objective: str | int = 0) -> list[ModelConfig]:
    """Greedily minimize the summed per-task best error of one objective."""
    k = objective if isinstance(objective, int) else train.objective_index(objective)
    order = greedy_from_matrix(_error_matrix(train, candidates, k), n)
    return [candidates[i] for i in order]


def random_select(candidates: Sequence[ModelConfig], n: int, seed) -> list:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(len(candidates))[:n]
    return [candidates[i] for i in perm]


def prefix_hv_errors(selected: Sequence[ModelConfig], task_configs: Sequence[ModelConfig],
                     task_values: np.ndarray) -> list[float]:
    """Hypervolume error of every prefix of ``selected`` on one task.

    Objectives are quantile-normalized over the task's evaluated configs and
    the reference point is all ones. Selected configs that the task never
    evaluated add nothing.
    """
    norm = quantile_normalize_columns(task_values)
    pos = {c: i for i, c in enumerate(task_configs)}
    front_hv = hypervolume(norm[pareto_front(norm)])
    out, rows = [], []
    for c in selected:
        if c in pos:
            rows.append(pos[c])
        out.append(front_hv - hypervolume(norm[rows]) if rows else front_hv)
    return out


def _oracle_predictor(configs: Sequence[ModelConfig], values: np.ndarray) -> Predictor:
    table = dict(zip(configs, values))
    worst = values.max(axis=0) + 1.0

    def predict(cands: Sequence[ModelConfig]) -> np.ndarray:
        return np.array([table.get(c, worst) for c in cands])

    return predict


def fold_seed(master: int, fold: int, repetition: int, method: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, fold, repetition, _METHOD_STREAM[method]])


def select_for_fold(method: str, train: EvaluationCorpus, candidates: Sequence[ModelConfig], n: int,
                    cfg: TrainConfig, rng_seed: int, test_table=None) -> list[ModelConfig]:
    if method == "pareto":
        return pareto_select(train, candidates, n, cfg).configs
    if method == "single":
        return single_objective_select(train, candidates, n, cfg).configs
    if method == "greedy":
        return greedy_model_free(train, candidates, min(n, len(candidates)), 0)
    if method == "random":
        return random_select(candidates, n, rng_seed)
    if method == "oracle":
        return pareto_select(train, candidates, n, cfg, predict=_oracle_predictor(*test_table)).configs
    raise ValueError(f"unknown method {method!r}")


@dataclass
class LoocvResult:
    method: str
    n_max: int
    seeds: list[int]
    folds: list[str]
    # curves[s, f, i]: hypervolume error with i + 1 defaults, seed s, fold f
    curves: np.ndarray

    @property
    def mean_curve(self) -> np.ndarray:
        return self.curves.mean(axis=(0, 1))

    @property
    def std_curve(self) -> np.ndarray:
        return self.curves.mean(axis=1).std(axis=0)

    def rows(self):
        for s, seed in enumerate(self.seeds):
            for f, fold in enumerate(self.folds):
                for i in range(self.n_max):
                    yield fold, i + 1, self.method, seed, float(self.curves[s, f, i])

    def summary(self) -> dict:
        return {
            "method": self.method,
            "n_max": self.n_max,
            "seeds": list(self.seeds),
            "folds": list(self.folds),
            "n": list(range(1, self.n_max + 1)),
            "mean": [float(v) for v in self.mean_curve],
            "std": [float(v) for v in self.std_curve],
        }

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "curves.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "n", "method", "seed", "hv_error"])
            for fold, n, method, seed, err in self.rows():
                w.writerow([fold, n, method, seed, repr(err)])
        (out_dir / "summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n")


def loocv(corpus: EvaluationCorpus, method: str, n_max: int = 10, seeds: Sequence[int] = (0,),
          cfg: TrainConfig = TrainConfig()) -> LoocvResult:
    """Hold out each task in turn, select up to ``n_max`` defaults, score every prefix."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if len(corpus.task_ids) < 2:
        raise ValueError("leave-one-out needs at least two tasks")
    candidates = corpus.configs()
    folds = corpus.task_ids
    curves = np.zeros((len(seeds), len(folds), n_max))
    for s, seed in enumerate(seeds):
        for f, task in enumerate(folds):
            ss = fold_seed(seed, f, s, method)
            fold_cfg = TrainConfig(**{**cfg.__dict__, "seed": int(ss.generate_state(1)[0])})
            test_table = corpus.task_table(task)
            selected = select_for_fold(method, corpus.drop_task(task), candidates, n_max, fold_cfg,
                                       np.random.default_rng(ss), test_table)
            errs = prefix_hv_errors(selected, *test_table)
            errs += [errs[-1]] * (n_max - len(errs))
            curves[s, f] = errs
        logger.info("loocv %s seed %s: mean error at n=%d is %.4f", method, seed, n_max,
                    curves[s, :, -1].mean())
    return LoocvResult(method, n_max, list(seeds), folds, curves)


def ranking_metrics(predicted_order: Sequence[int], true_values: Sequence[float],
                    ks: Sequence[int] = (5, 10, 20)) -> RankingReport:
    """MRR, NDCG over the true top-10 and Precision@k for a predicted order.

    ``predicted_order[r]`` is the index of the config predicted at rank
    ``r + 1``. True ranks break ties by index.
    """
    true_values = np.asarray(true_values, dtype=float)
    pred = np.asarray(predicted_order)
    n = len(true_values)
    if sorted(pred.tolist()) != list(range(n)):
        raise ValueError("predicted_order must be a permutation of the config indices")
    true_order = np.argsort(true_values, kind="stable")
    pred_rank = np.empty(n, dtype=int)
    pred_rank[pred] = np.arange(1, n + 1)
    mrr = 1.0 / pred_rank[true_order[0]]
    top = min(10, n)
    relevance = 1.1 - 0.1 * np.arange(1, top + 1)
    dcg = np.sum(relevance / np.log2(pred_rank[true_order[:top]] + 1))
    idcg = np.sum(relevance / np.log2(np.arange(1, top + 1) + 1))
    precision = {k: len(set(pred[:k].tolist()) & set(true_order[:k].tolist())) / k for k in ks if k <= n}
    return RankingReport(float(mrr), float(dcg / idcg), precision)


def order_from_scores(scores: np.ndarray) -> np.ndarray:
    return np.argsort(np.asarray(scores, dtype=float), kind="stable")


SURROGATE_KINDS = ("mlp-ranking-discounted", "mlp-ranking", "mlp-regression",
                   "nonparametric-value", "nonparametric-rank", "random")


def surrogate_ranking_loocv(corpus: EvaluationCorpus, kind: str, seeds: Sequence[int] = (0,),
                            cfg: TrainConfig = TrainConfig(), objective: str | None = None
                            ) -> dict[str, float]:
    """Average ranking quality of one surrogate kind over tasks and seeds."""
    objective = objective or corpus.objective_names[0]
    k = corpus.objective_index(objective)
    modes = {"mlp-ranking-discounted": "listwise-discounted", "mlp-ranking": "listwise-plain",
             "mlp-regression": "regression"}
    reports = []
    deterministic = kind.startswith("nonparametric")
    for s, seed in enumerate(seeds[:1] if deterministic else seeds):
        for f, task in enumerate(corpus.task_ids):
            train = corpus.drop_task(task)
            configs, values = corpus.task_table(task)
            ss = np.random.SeedSequence([seed, f, s, len(METHODS) + SURROGATE_KINDS.index(kind)])
            if kind in modes:
                fold_cfg = TrainConfig(**{**cfg.__dict__, "mode": modes[kind],
                                          "seed": int(ss.generate_state(1)[0])})
                scores = _fit_predictor(train, fold_cfg)(configs)[:, k]
            elif kind == "nonparametric-value":
                scores = nonparametric_baseline(train, "mean-value")(configs)[:, k]
            elif kind == "nonparametric-rank":
                scores = nonparametric_baseline(train, "mean-rank")(configs)[:, k]
            elif kind == "random":
                scores = np.random.default_rng(ss).uniform(size=len(configs))
            else:
                raise ValueError(f"unknown surrogate kind {kind!r}")
            reports.append(ranking_metrics(order_from_scores(scores), values[:, k]))
    out = {"mrr": float(np.mean([r.mrr for r in reports])),
           "ndcg": float(np.mean([r.ndcg for r in reports]))}
    for kk in sorted({kk for r in reports for kk in r.precision_at}):
        out[f"precision@{kk}"] = float(np.mean([r.precision_at[kk] for r in reports if kk in r.precision_at]))
    return out
