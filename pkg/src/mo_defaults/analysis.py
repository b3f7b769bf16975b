"""Statistical comparison of method groups and per-task rank tables."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .eval_store import CLASSICAL_MODELS, DEEP_MODELS, EvaluationCorpus, ModelConfig

logger = logging.getLogger(__name__)

_SERIES_TOL = 1e-12


@dataclass(frozen=True)
class MethodGroup:
    name: str
    members: frozenset[str]

    def __post_init__(self):
        if not self.members:
            raise ValueError(f"group {self.name!r} is empty")

    def __contains__(self, model_name: str) -> bool:
        return model_name in self.members


CLASSICAL = MethodGroup("classical", frozenset(CLASSICAL_MODELS))
DEEP = MethodGroup("deep", frozenset(DEEP_MODELS))


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / len(a)
    cdf_b = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(cdf_a - cdf_b)))


def kolmogorov_sf(lam: float) -> float:
    """Survival function ``P(K > lam)`` of the Kolmogorov distribution."""
    if lam <= 0.0:
        return 1.0
    if lam < 1.18:
        # Jacobi-theta form converges fast for small arguments
        total, k = 0.0, 1
        c = math.pi ** 2 / (8.0 * lam * lam)
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * c)
            total += term
            if term < _SERIES_TOL:
                break
            k += 1
        return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / lam * total))
    total, k = 0.0, 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += (-1) ** (k - 1) * term
        if term < _SERIES_TOL:
            break
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided two-sample KS statistic and asymptotic p-value.

    The p-value uses the limiting Kolmogorov distribution at
    ``sqrt(n*m/(n+m)) * D`` and is clamped to a positive floor.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be nonempty")
    d = ks_statistic(a, b)
    ne = len(a) * len(b) / (len(a) + len(b))
    p = kolmogorov_sf(math.sqrt(ne) * d)
    return d, max(p, np.finfo(float).tiny)


def relative_improvement(best_deep_ncrps: float, best_classical_ncrps: float) -> float:
    if best_deep_ncrps <= 0 or best_classical_ncrps <= 0:
        raise ValueError("nCRPS values must be positive")
    return best_deep_ncrps / best_classical_ncrps - 1.0


def _group_values(corpus: EvaluationCorpus, task: str, group: MethodGroup, objective: str) -> list[float]:
    k = corpus.objective_index(objective)
    return [r.objectives.values[k] for r in corpus.task_records(task) if r.config.model_name in group]


def ks_by_task(corpus: EvaluationCorpus, objective: str = "ncrps", groups=(CLASSICAL, DEEP)) -> list[dict]:
    """One KS record per task comparing single-model evaluations of two groups."""
    a_group, b_group = groups
    out = []
    for task in corpus.task_ids:
        a = _group_values(corpus, task, a_group, objective)
        b = _group_values(corpus, task, b_group, objective)
        if not a or not b:
            logger.warning("task %s lacks evaluations for one group; skipped", task)
            continue
        d, p = ks_two_sample(a, b)
        out.append({"task": task, "D": d, "p": p, "n_class": len(a), "n_deep": len(b)})
    return out


def improvement_by_task(corpus: EvaluationCorpus, objective: str = "ncrps") -> list[dict]:
    out = []
    for task in corpus.task_ids:
        configs, values = corpus.task_table(task)
        k = corpus.objective_index(objective)
        deep = [v for c, v in zip(configs, values[:, k]) if c.model_name in DEEP]
        classical = [v for c, v in zip(configs, values[:, k]) if c.model_name in CLASSICAL]
        if not deep or not classical:
            logger.warning("task %s lacks evaluations for one group; skipped", task)
            continue
        out.append({"task": task, "n_configs": len(configs),
                    "relative_improvement": relative_improvement(min(deep), min(classical))})
    return out


@dataclass
class RankTable:
    tasks: list[str]
    methods: list[str]
    # ranks[t, j]: rank of method j on task t (1 = best, ties averaged)
    ranks: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.ranks.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.ranks.std(axis=0)


def _method_label(config: ModelConfig, ambiguous: set[str]) -> str:
    return config.label() if config.model_name in ambiguous else config.model_name


def rank_table(corpus: EvaluationCorpus, objective: str = "ncrps",
               config_filter: Callable[[ModelConfig], bool] = lambda c: True) -> RankTable:
    """Within-task ranks of every retained config; tasks missing any of them are skipped."""
    k = corpus.objective_index(objective)
    configs = [c for c in corpus.configs() if config_filter(c)]
    names = [c.model_name for c in configs]
    ambiguous = {n for n in names if names.count(n) > 1}
    methods = [_method_label(c, ambiguous) for c in configs]
    rows, tasks = [], []
    for task in corpus.task_ids:
        task_configs, values = corpus.task_table(task)
        lookup = dict(zip(task_configs, values[:, k]))
        if any(c not in lookup for c in configs):
            logger.warning("task %s misses evaluations of retained methods; skipped", task)
            continue
        tasks.append(task)
        rows.append(rankdata([lookup[c] for c in configs], method="average"))
    if not tasks or not configs:
        raise ValueError("no task evaluates every retained method")
    return RankTable(tasks, methods, np.array(rows))


def rank_correlation_matrix(table: RankTable) -> np.ndarray:
    """Pearson correlation between task rank rows; NaN where a row has no variance."""
    if len(table.tasks) < 2:
        raise ValueError("need at least two tasks")
    r = table.ranks - table.ranks.mean(axis=1, keepdims=True)
    norms = np.sqrt((r * r).sum(axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = (r @ r.T) / np.outer(norms, norms)
    corr[norms == 0, :] = np.nan
    corr[:, norms == 0] = np.nan
    np.fill_diagonal(corr, np.where(norms == 0, np.nan, 1.0))
    return np.clip(corr, -1.0, 1.0)
