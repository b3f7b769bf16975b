"""MLP surrogate trained with a discounted listwise ranking loss.

The network maps a config encoding (28 features) through two hidden layers
of 32 LeakyReLU units to one score per objective. Lower scores mean better
configurations. Gradients are computed by hand with numpy; the loss is the
negative list log-likelihood with per-position weights ``1/i``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.stats import rankdata

from .eval_store import (
    EvaluationCorpus,
    HyperparameterSchema,
    ModelConfig,
    Standardizer,
    fit_standardizer,
    vectorize_all,
)
from .moo import quantile_normalize

logger = logging.getLogger(__name__)

HIDDEN = 32
Mode = Literal["listwise-discounted", "listwise-plain", "regression"]
MODES = ("listwise-discounted", "listwise-plain", "regression")


@dataclass(frozen=True)
class SurrogateParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    slope: float = 0.01

    def __post_init__(self):
        d_in, h1 = self.W1.shape
        if self.W2.shape[0] != h1 or self.W3.shape[0] != self.W2.shape[1]:
            raise ValueError("inconsistent layer shapes")
        if (self.b1.shape != (h1,) or self.b2.shape != (self.W2.shape[1],)
                or self.b3.shape != (self.W3.shape[1],)):
            raise ValueError("bias shapes do not match weights")
        for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def m(self) -> int:
        return self.W3.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "slope"}

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def with_flat(self, vec: np.ndarray) -> "SurrogateParams":
        out, pos = {}, 0
        for name, a in self.arrays().items():
            out[name] = vec[pos: pos + a.size].reshape(a.shape).copy()
            pos += a.size
        return replace(self, **out)

    def weights(self) -> tuple[np.ndarray, ...]:
        return self.W1, self.W2, self.W3


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 200
    weight_decay: float = 0.01
    seed: int = 0
    mode: Mode = "listwise-discounted"
    slope: float = 0.01

    def __post_init__(self):
        if not self.learning_rate > 0 or self.epochs < 1:
            raise ValueError("learning_rate and epochs must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    def seeds(self) -> tuple[int, int, int]:
        """Init, shuffle and selection seeds expanded from the master seed."""
        ss = np.random.SeedSequence(self.seed)
        return tuple(int(c.generate_state(1)[0]) for c in ss.spawn(3))


@dataclass(frozen=True)
class TaskRankBatch:
    """One task's encoded configs and their true objective values ``y[N, m]``."""

    task_id: str
    features: np.ndarray
    y: np.ndarray
    ranks: np.ndarray = field(init=False, repr=False)
    targets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if len(y) < 1 or len(y) != len(self.features):
            raise ValueError("batch needs N >= 1 rows matching its features")
        object.__setattr__(self, "y", y)
        # ranks[:, k] lists config indices from best to worst; ties by index
        object.__setattr__(self, "ranks", np.argsort(y, axis=0, kind="stable"))
        object.__setattr__(self, "targets", np.column_stack(
            [quantile_normalize(y[:, k]) for k in range(y.shape[1])]))


def init_surrogate(m: int, seed: int = 0, d_in: int = 28, slope: float = 0.01) -> SurrogateParams:
    if m < 1:
        raise ValueError("need m >= 1 outputs")
    rng = np.random.default_rng(seed)
    sizes = [d_in, HIDDEN, HIDDEN, m]
    arrays = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        arrays[f"b{i}"] = np.zeros(fan_out)
    return SurrogateParams(**arrays, slope=slope)


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def _forward_cache(params, X: np.ndarray):
    """Forward pass keeping activations; ``params`` is a SurrogateParams or array dict."""
    p = params.arrays() if isinstance(params, SurrogateParams) else params
    slope = params.slope if isinstance(params, SurrogateParams) else p["slope"]
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != p["W1"].shape[0]:
        raise ValueError(f"expected features of width {p['W1'].shape[0]}, got shape {X.shape}")
    # overflow is reported below with the offending layer
    with np.errstate(over="ignore", invalid="ignore"):
        z1 = X @ p["W1"] + p["b1"]
        a1 = _leaky(z1, slope)
        z2 = a1 @ p["W2"] + p["b2"]
        a2 = _leaky(z2, slope)
        out = a2 @ p["W3"] + p["b3"]
    for layer, arr in enumerate((z1, z2, out), start=1):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite activations in layer {layer}")
    return out, (X, z1, a1, z2, a2)


def forward(params: SurrogateParams, features) -> np.ndarray:
    """Scores for one encoding (returns shape ``(m,)``) or a batch (``(N, m)``)."""
    X = np.asarray(features, dtype=float)
    single = X.ndim == 1
    out, _ = _forward_cache(params, X[None, :] if single else X)
    return out[0] if single else out


def _discounts(n: int, discounted: bool) -> np.ndarray:
    return 1.0 / np.arange(1, n + 1) if discounted else np.ones(n)


def listwise_loss(scores: Sequence[float], ranking: Sequence[int], discounted: bool = True) -> float:
    """Negative weighted list log-likelihood.

    ``ranking[i]`` is the index of the config at true position ``i`` (0-based,
    best first). Lower scores should go to better configs.
    """
    loss, _ = _listwise_loss_grad(np.asarray(scores, dtype=float), np.asarray(ranking), discounted)
    return loss


@lru_cache(maxsize=64)
def _strict_lower(n: int) -> np.ndarray:
    return np.tri(n, k=-1, dtype=bool)


def _listwise_loss_grad(scores: np.ndarray, ranking: np.ndarray, discounted: bool):
    t = scores[ranking]
    n = len(t)
    w = _discounts(n, discounted)
    # suffix log-sum-exp of -t: lse[i] = log sum_{l >= i} exp(-t_l)
    lse = np.logaddexp.accumulate((-t)[::-1])[::-1]
    loss = float(np.sum(w * (t + lse)))
    # d lse_i / d t_p = -softmax over suffix i, restricted to p >= i
    expo = -t[None, :] - lse[:, None]
    expo[_strict_lower(n)] = -np.inf
    probs = np.exp(expo)
    grad_t = w - w @ probs
    grad = np.empty(n)
    grad[ranking] = grad_t
    return loss, grad


def _regression_loss_grad(scores: np.ndarray, targets: np.ndarray):
    diff = scores - targets
    return float(np.sum(diff ** 2)), 2.0 * diff


def _output_loss_grad(out: np.ndarray, batch: TaskRankBatch, mode: str, objectives):
    loss = 0.0
    grad = np.zeros_like(out)
    for k in objectives:
        if mode == "regression":
            lk, gk = _regression_loss_grad(out[:, k], batch.targets[:, k])
        else:
            lk, gk = _listwise_loss_grad(out[:, k], batch.ranks[:, k], mode == "listwise-discounted")
        loss += lk
        grad[:, k] = gk
    return loss, grad


def _backward(p: dict, cache, g_out: np.ndarray) -> dict[str, np.ndarray]:
    X, z1, a1, z2, a2 = cache
    slope = p["slope"]
    grads = {"W3": a2.T @ g_out, "b3": g_out.sum(axis=0)}
    g = (g_out @ p["W3"].T) * np.where(z2 > 0, 1.0, slope)
    grads["W2"], grads["b2"] = a1.T @ g, g.sum(axis=0)
    g = (g @ p["W2"].T) * np.where(z1 > 0, 1.0, slope)
    grads["W1"], grads["b1"] = X.T @ g, g.sum(axis=0)
    return grads


def _loss_grad_arrays(p: dict, batch: Sequence[TaskRankBatch], mode: str, weight_decay: float,
                      objectives: Sequence[int]) -> tuple[float, dict[str, np.ndarray]]:
    total = 0.0
    acc: dict[str, np.ndarray] | None = None
    for b in batch:
        out, cache = _forward_cache(p, b.features)
        loss, g_out = _output_loss_grad(out, b, mode, objectives)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss on task {b.task_id!r}")
        total += loss
        grads = _backward(p, cache, g_out)
        if acc is None:
            acc = grads
        else:
            for k, g in grads.items():
                acc[k] += g
    if len(batch) > 1:
        total /= len(batch)
        for k in acc:
            acc[k] /= len(batch)
    if weight_decay:
        for name in ("W1", "W2", "W3"):
            w = p[name]
            total += weight_decay * float(np.sum(w * w))
            acc[name] = acc[name] + 2.0 * weight_decay * w
    return total, acc


def objective_loss(params: SurrogateParams, batch: Sequence[TaskRankBatch], cfg: TrainConfig,
                   objectives: Sequence[int] | None = None) -> float:
    """Mean per-task loss plus ``weight_decay * ||W||^2`` (biases not decayed)."""
    return loss_and_gradient(params, batch, cfg, objectives)[0]


def loss_gradient(params: SurrogateParams, batch: Sequence[TaskRankBatch], cfg: TrainConfig,
                  objectives: Sequence[int] | None = None) -> SurrogateParams:
    return loss_and_gradient(params, batch, cfg, objectives)[1]


def loss_and_gradient(params: SurrogateParams, batch: Sequence[TaskRankBatch], cfg: TrainConfig,
                      objectives: Sequence[int] | None = None) -> tuple[float, SurrogateParams]:
    if not batch:
        raise ValueError("empty batch")
    objectives = range(params.m) if objectives is None else objectives
    p = {**params.arrays(), "slope": params.slope}
    loss, grads = _loss_grad_arrays(p, batch, cfg.mode, cfg.weight_decay, objectives)
    return loss, replace(params, **grads)


def build_batches(corpus: EvaluationCorpus, schema: HyperparameterSchema, std: Standardizer
                  ) -> list[TaskRankBatch]:
    out = []
    for task in corpus.task_ids:
        configs, values = corpus.task_table(task)
        out.append(TaskRankBatch(task, vectorize_all(configs, schema, std), values))
    return out


def train_surrogate(corpus: EvaluationCorpus, cfg: TrainConfig = TrainConfig(),
                    std: Standardizer | None = None, history: list[float] | None = None
                    ) -> SurrogateParams:
    """Fit the surrogate by plain SGD, one step per (task, objective) list.

    The list of steps is shuffled every epoch. Seed-averaged objectives are
    used per (task, config). ``history``, if given, receives the summed
    pre-update loss of every epoch.
    """
    schema = corpus.schema
    std = fit_standardizer(corpus) if std is None else std
    batches = build_batches(corpus, schema, std)
    init_seed, shuffle_seed, _ = cfg.seeds()
    params = init_surrogate(corpus.m, init_seed, schema.dim, cfg.slope)
    p = {**params.arrays(), "slope": params.slope}
    rng = np.random.default_rng(shuffle_seed)
    steps = [(b, (k,)) for b in batches for k in range(corpus.m)]
    epoch_loss = 0.0
    for _ in range(cfg.epochs):
        epoch_loss = 0.0
        for i in rng.permutation(len(steps)):
            b, k = steps[i]
            loss, grads = _loss_grad_arrays(p, (b,), cfg.mode, cfg.weight_decay, k)
            epoch_loss += loss
            for name, g in grads.items():
                p[name] -= cfg.learning_rate * g
        if history is not None:
            history.append(epoch_loss)
    logger.info("surrogate trained: mode=%s epochs=%d final loss %.6g", cfg.mode, cfg.epochs, epoch_loss)
    return replace(params, **{k: v for k, v in p.items() if k != "slope"})


def predict_all(params: SurrogateParams, configs: Sequence[ModelConfig], schema: HyperparameterSchema,
                std: Standardizer) -> np.ndarray:
    if not configs:
        raise ValueError("no configs to predict")
    return forward(params, vectorize_all(configs, schema, std))


class NonparametricBaseline:
    """Per-config average of the raw value or of the within-task rank."""

    def __init__(self, corpus: EvaluationCorpus, mode: str = "mean-value"):
        if mode not in ("mean-value", "mean-rank"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        sums: dict[ModelConfig, np.ndarray] = {}
        counts: dict[ModelConfig, int] = {}
        for task in corpus.task_ids:
            configs, values = corpus.task_table(task)
            if mode == "mean-rank":
                values = np.column_stack([rankdata(values[:, k]) for k in range(values.shape[1])])
            for c, v in zip(configs, values):
                sums[c] = sums.get(c, 0) + v
                counts[c] = counts.get(c, 0) + 1
        self.table = {c: sums[c] / counts[c] for c in sums}

    def __call__(self, configs: Sequence[ModelConfig]) -> np.ndarray:
        missing = [c.label() for c in configs if c not in self.table]
        if missing:
            raise KeyError(f"configs never observed in training: {missing[:3]}")
        return np.array([self.table[c] for c in configs])


def nonparametric_baseline(corpus: EvaluationCorpus, mode: str = "mean-value") -> NonparametricBaseline:
    return NonparametricBaseline(corpus, mode)


def make_predictor(params: SurrogateParams, schema: HyperparameterSchema, std: Standardizer
                   ) -> Callable[[Sequence[ModelConfig]], np.ndarray]:
    return lambda configs: predict_all(params, configs, schema, std)


def save_params(params: SurrogateParams, path: str | Path, schema: HyperparameterSchema,
                std: Standardizer | None = None) -> None:
    blob = {name: arr.tolist() for name, arr in params.arrays().items()}
    blob["slope"] = params.slope
    blob["schema_fingerprint"] = schema.fingerprint()
    if std is not None:
        blob["standardizer"] = {"mean": list(std.mean), "std": list(std.std), "constant": list(std.constant)}
    Path(path).write_text(json.dumps(blob))


def load_params(path: str | Path, schema: HyperparameterSchema) -> tuple[SurrogateParams, Standardizer | None]:
    blob = json.loads(Path(path).read_text())
    if blob.get("schema_fingerprint") != schema.fingerprint():
        raise ValueError("surrogate was saved with a different hyperparameter schema")
    arrays = {k: np.asarray(blob[k], dtype=float) for k in ("W1", "b1", "W2", "b2", "W3", "b3")}
    std = None
    if "standardizer" in blob:
        s = blob["standardizer"]
        std = Standardizer(tuple(s["mean"]), tuple(s["std"]), tuple(s["constant"]))
    return SurrogateParams(**arrays, slope=float(blob["slope"])), std
