"""Seeded synthetic evaluation corpora with a planted accuracy/latency trade-off.

Each config gets a latent capacity from its encoding. Larger capacity and
longer training lower the error but raise latency, so every task has a
non-trivial Pareto front. Tasks differ by an error scale spanning orders of
magnitude, small model-family effects, per-config noise and occasional
error spikes; averaging raw errors across tasks is therefore dominated by a
few tasks while rank structure is shared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eval_store import (
    CLASSICAL_MODELS,
    DEFAULT_SCHEMA,
    EvaluationCorpus,
    EvaluationRecord,
    ModelConfig,
    ObjectiveVector,
    benchmark_configs,
)

# (log error offset, log latency in seconds) per model family
_FAMILY = {
    "ARIMA": (-0.05, np.log(0.40)),
    "ETS": (0.05, np.log(0.20)),
    "NPTS": (0.35, np.log(0.05)),
    "Prophet": (0.30, np.log(0.80)),
    "SeasonalNaive": (0.60, np.log(0.0005)),
    "STL-AR": (0.15, np.log(0.10)),
    "Theta": (0.10, np.log(0.15)),
    "DeepAR": (-0.30, np.log(0.020)),
    "MQ-CNN": (-0.10, np.log(0.002)),
    "MQ-RNN": (0.20, np.log(0.003)),
    "N-BEATS": (-0.15, np.log(0.010)),
    "SimpleFeedForward": (0.00, np.log(0.001)),
    "TFT": (-0.35, np.log(0.015)),
}

# which hyperparameter carries capacity for each deep family, with its small/large range
_CAPACITY_KEY = {
    "DeepAR": ("deepar_num_cells", 20, 80),
    "MQ-CNN": ("mqcnn_num_filters", 20, 40),
    "N-BEATS": ("nbeats_num_blocks", 1, 5),
    "SimpleFeedForward": ("sff_hidden_dim", 30, 80),
    "TFT": ("tft_hidden_dim", 16, 64),
}


@dataclass(frozen=True)
class SyntheticSpec:
    n_tasks: int = 12
    n_configs: int = 60
    n_seeds: int = 1
    scale_sigma: float = 2.5
    family_sigma: float = 0.10
    noise_sigma: float = 0.06
    spike_prob: float = 0.15
    spike_factor: float = 6.0
    latency_sigma: float = 0.05
    seed: int = 0


def _capacity(config: ModelConfig) -> float:
    """Latent capacity in [0, 1] for deep models, 0 for classical ones."""
    if config.model_name not in _CAPACITY_KEY:
        return 0.0
    key, lo, hi = _CAPACITY_KEY[config.model_name]
    return (np.log(config.hp[key]) - np.log(lo)) / (np.log(hi) - np.log(lo))


def planted_objectives(config: ModelConfig) -> tuple[float, float]:
    """Noise-free ``(log error, log latency)`` of a config."""
    err, lat = _FAMILY[config.model_name]
    if config.model_name in CLASSICAL_MODELS:
        return err, lat
    cap = _capacity(config)
    ctx = np.log2(config.hp.get("context_length_multiple", 1.0))
    frac = config.training_fraction or 1.0
    err += -0.35 * cap + 0.04 * (ctx - 1.5) ** 2 - 0.12 * np.log(frac)
    lat += 1.2 * cap + 0.15 * ctx
    return float(err), float(lat)


def synthetic_configs(n_configs: int, rng: np.random.Generator) -> list[ModelConfig]:
    pool = benchmark_configs()
    classical = [c for c in pool if c.model_name in CLASSICAL_MODELS]
    deep = [c for c in pool if c.model_name not in CLASSICAL_MODELS]
    n_classical = min(len(classical), max(1, n_configs // 8))
    picks = [classical[i] for i in sorted(rng.choice(len(classical), n_classical, replace=False))]
    picks += [deep[i] for i in sorted(rng.choice(len(deep), n_configs - n_classical, replace=False))]
    return picks


def make_synthetic_corpus(spec: SyntheticSpec = SyntheticSpec()) -> EvaluationCorpus:
    """Generate a corpus with objectives ``(ncrps, latency)``."""
    rng = np.random.default_rng(spec.seed)
    configs = synthetic_configs(spec.n_configs, rng)
    base = np.array([planted_objectives(c) for c in configs])
    families = sorted({c.model_name for c in configs})
    names = ("ncrps", "latency")
    records = []
    for j in range(spec.n_tasks):
        task = f"task_{j:02d}"
        log_scale = rng.normal(0.0, spec.scale_sigma) + np.log(0.1)
        lat_scale = rng.normal(0.0, 0.3)
        fam = dict(zip(families, rng.normal(0.0, spec.family_sigma, len(families))))
        task_err = base[:, 0] + np.array([fam[c.model_name] for c in configs])
        for seed in range(spec.n_seeds):
            err = task_err + rng.normal(0.0, spec.noise_sigma, len(configs))
            spikes = rng.random(len(configs)) < spec.spike_prob
            err = err + spikes * np.log(spec.spike_factor)
            lat = base[:, 1] + lat_scale + rng.normal(0.0, spec.latency_sigma, len(configs))
            for c, e, la in zip(configs, err, lat):
                values = (float(np.exp(e + log_scale)), float(np.exp(la)))
                records.append(EvaluationRecord(task, c, seed, ObjectiveVector(names, values)))
    return EvaluationCorpus(records, names, DEFAULT_SCHEMA)
