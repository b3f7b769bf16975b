"""Offline evaluation tables: configuration registry, corpus I/O and feature encoding.

A corpus is a flat table of ``(task, config, seed) -> objective values`` rows.
Configurations are encoded for the surrogate as a one-hot model indicator
followed by standardized hyperparameter values.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CLASSICAL_MODELS = ("ARIMA", "ETS", "NPTS", "Prophet", "SeasonalNaive", "STL-AR", "Theta")
DEEP_MODELS = ("DeepAR", "MQ-CNN", "MQ-RNN", "N-BEATS", "SimpleFeedForward", "TFT")
MODEL_NAMES = CLASSICAL_MODELS + DEEP_MODELS

# Shared deep-learning features come last; ``training_time`` holds the checkpoint fraction.
TRAINING_TIME = "training_time"
FEATURE_NAMES = (
    "deepar_num_layers",
    "deepar_num_cells",
    "mqcnn_num_filters",
    "mqcnn_kernel_size_1",
    "mqcnn_kernel_size_2",
    "mqcnn_kernel_size_3",
    "nbeats_num_stacks",
    "nbeats_num_blocks",
    "sff_hidden_dim",
    "sff_num_layers",
    "tft_hidden_dim",
    "tft_num_heads",
    "context_length_multiple",
    TRAINING_TIME,
    "learning_rate",
)

NON_NEGATIVE_PREFIXES = ("latency", "training_time", "model_size")


class CorpusError(ValueError):
    """Raised when an evaluation table is malformed or violates an invariant."""


@dataclass(frozen=True)
class HyperparameterSchema:
    """Fixed, ordered feature and model vocabularies used for encoding."""

    feature_names: tuple[str, ...] = FEATURE_NAMES
    model_names: tuple[str, ...] = MODEL_NAMES

    def __post_init__(self):
        if len(self.feature_names) != 15:
            raise ValueError(f"schema needs 15 features, got {len(self.feature_names)}")
        if len(self.model_names) != 13:
            raise ValueError(f"schema needs 13 models, got {len(self.model_names)}")
        if len(set(self.feature_names)) != 15 or len(set(self.model_names)) != 13:
            raise ValueError("schema names must be unique")

    @property
    def dim(self) -> int:
        return len(self.model_names) + len(self.feature_names)

    def fingerprint(self) -> str:
        blob = json.dumps([self.model_names, self.feature_names]).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


DEFAULT_SCHEMA = HyperparameterSchema()


@dataclass(frozen=True)
class ModelConfig:
    """A forecasting method plus its hyperparameter assignment.

    ``hyperparameters`` is stored as a sorted tuple of pairs so configs are
    hashable; build instances with :meth:`make`.
    """

    model_name: str
    hyperparameters: tuple[tuple[str, float], ...] = ()
    training_fraction: float | None = None

    @classmethod
    def make(cls, model_name: str, hyperparameters: Mapping[str, float] | None = None,
             training_fraction: float | None = None) -> "ModelConfig":
        hps = tuple(sorted((str(k), float(v)) for k, v in (hyperparameters or {}).items()))
        if training_fraction is not None:
            training_fraction = float(training_fraction)
            if not 0.0 < training_fraction <= 1.0:
                raise ValueError(f"training_fraction must lie in (0, 1], got {training_fraction}")
        return cls(model_name, hps, training_fraction)

    @property
    def hp(self) -> dict[str, float]:
        return dict(self.hyperparameters)

    def label(self) -> str:
        parts = [f"{k}={v:g}" for k, v in self.hyperparameters]
        if self.training_fraction is not None:
            parts.append(f"{TRAINING_TIME}={self.training_fraction:.6g}")
        return f"{self.model_name}[{','.join(parts)}]" if parts else self.model_name

    def slug(self) -> str:
        """File-system safe identifier, stable across runs."""
        digest = hashlib.sha1(self.label().encode()).hexdigest()[:10]
        name = "".join(c.lower() if c.isalnum() else "-" for c in self.model_name)
        return f"{name}-{digest}"

    def feature_values(self) -> dict[str, float]:
        """Raw (unstandardized) schema feature values defined by this config."""
        values = self.hp
        if self.training_fraction is not None:
            values[TRAINING_TIME] = self.training_fraction
        return values


@dataclass(frozen=True)
class ObjectiveVector:
    names: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ValueError("objective names and values differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("objective names must be unique")
        if not self.names:
            raise ValueError("need at least one objective")

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class EvaluationRecord:
    task_id: str
    config: ModelConfig
    seed: int
    objectives: ObjectiveVector


@dataclass
class EvaluationCorpus:
    """Immutable-by-convention collection of evaluation records."""

    records: list[EvaluationRecord]
    objective_names: tuple[str, ...]
    schema: HyperparameterSchema = DEFAULT_SCHEMA
    tasks: dict[str, list[int]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.records:
            raise CorpusError("empty corpus")
        self.objective_names = tuple(self.objective_names)
        self.tasks = {}
        seen = set()
        for i, rec in enumerate(self.records):
            key = (rec.task_id, rec.config, rec.seed)
            if key in seen:
                raise CorpusError(f"duplicate key {rec.task_id!r}, {rec.config.label()}, seed={rec.seed}")
            seen.add(key)
            if rec.objectives.names != self.objective_names:
                raise CorpusError(f"record {i} carries objectives {rec.objectives.names}")
            self.tasks.setdefault(rec.task_id, []).append(i)

    @property
    def task_ids(self) -> list[str]:
        return list(self.tasks)

    @property
    def m(self) -> int:
        return len(self.objective_names)

    def objective_index(self, name: str) -> int:
        try:
            return self.objective_names.index(name)
        except ValueError:
            raise KeyError(f"objective {name!r} not in corpus {self.objective_names}") from None

    def configs(self) -> list[ModelConfig]:
        """Distinct configs in first-seen order."""
        return list(dict.fromkeys(r.config for r in self.records))

    def task_records(self, task_id: str) -> list[EvaluationRecord]:
        if task_id not in self.tasks:
            raise KeyError(f"unknown task {task_id!r}")
        return [self.records[i] for i in self.tasks[task_id]]

    def task_table(self, task_id: str) -> tuple[list[ModelConfig], np.ndarray]:
        """Seed-averaged objectives of one task as ``(configs, values[N, m])``."""
        sums: dict[ModelConfig, list] = {}
        for rec in self.task_records(task_id):
            acc = sums.setdefault(rec.config, [np.zeros(self.m), 0])
            acc[0] += rec.objectives.as_array()
            acc[1] += 1
        configs = list(sums)
        values = np.array([sums[c][0] / sums[c][1] for c in configs])
        return configs, values

    def drop_task(self, task_id: str) -> "EvaluationCorpus":
        if task_id not in self.tasks:
            raise KeyError(f"unknown task {task_id!r}")
        keep = [r for r in self.records if r.task_id != task_id]
        return EvaluationCorpus(keep, self.objective_names, self.schema)

    def select_objectives(self, names: Sequence[str]) -> "EvaluationCorpus":
        idx = [self.objective_index(n) for n in names]
        names = tuple(names)
        recs = [
            EvaluationRecord(r.task_id, r.config, r.seed,
                             ObjectiveVector(names, tuple(r.objectives.values[i] for i in idx)))
            for r in self.records
        ]
        return EvaluationCorpus(recs, names, self.schema)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.objective_names).encode())
        for r in self.records:
            h.update(f"{r.task_id}|{r.config.label()}|{r.seed}|{r.objectives.values!r}\n".encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class Standardizer:
    mean: tuple[float, ...]
    std: tuple[float, ...]
    constant: tuple[bool, ...]


def _parse_float(text: str, what: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise CorpusError(f"line {line}: malformed {what} value {text!r}") from None


def _build_record(row: Mapping[str, object], objective_names: Sequence[str], maximize: set[str],
                  schema: HyperparameterSchema, line: int) -> EvaluationRecord | None:
    try:
        task_id = str(row["task_id"]).strip()
        model_name = str(row["model_name"]).strip()
        seed_raw = row["seed"]
    except KeyError as exc:
        raise CorpusError(f"line {line}: missing field {exc.args[0]}") from None
    if not task_id:
        raise CorpusError(f"line {line}: empty task_id")
    if model_name not in schema.model_names:
        raise CorpusError(f"line {line}: unknown model {model_name!r}")
    try:
        seed = int(str(seed_raw).strip() or 0)
    except ValueError:
        raise CorpusError(f"line {line}: malformed seed {seed_raw!r}") from None

    hps: dict[str, float] = {}
    fraction = None
    for key, raw in row.items():
        if not str(key).startswith("hp:") or raw is None or str(raw).strip() == "":
            continue
        name = str(key)[3:]
        if name not in schema.feature_names:
            raise CorpusError(f"line {line}: hyperparameter {name!r} not in schema")
        value = _parse_float(str(raw), name, line)
        if not math.isfinite(value):
            raise CorpusError(f"line {line}: non-finite hyperparameter {name}")
        if name == TRAINING_TIME:
            fraction = value
        else:
            hps[name] = value

    values = []
    for name in objective_names:
        raw = row.get(f"metric:{name}")
        if raw is None or str(raw).strip() == "":
            logger.warning("line %d: missing metric %s for task %s; row skipped", line, name, task_id)
            return None
        value = _parse_float(str(raw), name, line)
        if not math.isfinite(value):
            raise CorpusError(f"line {line}: non-finite metric value for {name}")
        if value < 0 and name.startswith(NON_NEGATIVE_PREFIXES):
            raise CorpusError(f"line {line}: negative {name.split('_')[0]} ({value})")
        values.append(-value if name in maximize else value)

    try:
        config = ModelConfig.make(model_name, hps, fraction)
    except ValueError as exc:
        raise CorpusError(f"line {line}: {exc}") from None
    return EvaluationRecord(task_id, config, seed, ObjectiveVector(tuple(objective_names), tuple(values)))


def load_evaluations(path: str | Path, objective_names: Sequence[str] = ("ncrps", "latency"),
                     maximize: Iterable[str] = (), schema: HyperparameterSchema = DEFAULT_SCHEMA
                     ) -> EvaluationCorpus:
    """Load a corpus from CSV or JSON lines.

    Args:
        path: ``.csv`` file, or ``.jsonl``/``.json`` with one record per line.
        objective_names: metrics to keep, in order. Metric columns are named
            ``metric:<name>`` in the file.
        maximize: objectives where larger is better; they are negated so
            every downstream consumer minimizes.

    Raises:
        CorpusError: on malformed rows (with line number), unknown objective,
            non-finite metric, negative latency or duplicate keys.
    """
    path = Path(path)
    objective_names = tuple(objective_names)
    if not objective_names:
        raise CorpusError("need at least one objective")
    maximize = set(maximize)
    rows: list[tuple[int, Mapping[str, object]]] = []
    columns: set[str] = set()
    with path.open(encoding="utf-8", newline="") as fh:
        if path.suffix.lower() in (".jsonl", ".json", ".ndjson"):
            for line, text in enumerate(fh, start=1):
                if not text.strip():
                    continue
                try:
                    row = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"line {line}: invalid JSON ({exc.msg})") from None
                if not isinstance(row, dict):
                    raise CorpusError(f"line {line}: expected a JSON object")
                columns.update(row)
                rows.append((line, row))
        else:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise CorpusError("empty corpus")
            columns.update(reader.fieldnames)
            for row in reader:
                if None in row:
                    raise CorpusError(f"line {reader.line_num}: too many fields")
                rows.append((reader.line_num, row))
    if not rows:
        raise CorpusError("empty corpus")
    for name in objective_names:
        if f"metric:{name}" not in columns:
            available = sorted(c[7:] for c in columns if c.startswith("metric:"))
            raise CorpusError(f"unknown objective {name!r}; available: {available}")

    records = []
    for line, row in rows:
        rec = _build_record(row, objective_names, maximize, schema, line)
        if rec is not None:
            records.append(rec)
    return EvaluationCorpus(records, objective_names, schema)


def write_corpus(corpus: EvaluationCorpus, path: str | Path) -> None:
    """Write the canonical CSV form (JSON lines when the suffix is ``.jsonl``)."""
    path = Path(path)
    hp_cols = [f"hp:{n}" for n in corpus.schema.feature_names]
    metric_cols = [f"metric:{n}" for n in corpus.objective_names]

    def row(rec: EvaluationRecord) -> dict[str, object]:
        out: dict[str, object] = {"task_id": rec.task_id, "model_name": rec.config.model_name,
                                  "seed": rec.seed}
        feats = rec.config.feature_values()
        for name in corpus.schema.feature_names:
            if name in feats:
                out[f"hp:{name}"] = feats[name]
        for name, value in zip(corpus.objective_names, rec.objectives.values):
            out[f"metric:{name}"] = value
        return out

    with path.open("w", encoding="utf-8", newline="") as fh:
        if path.suffix.lower() in (".jsonl", ".ndjson"):
            for rec in corpus.records:
                fh.write(json.dumps(row(rec)) + "\n")
            return
        writer = csv.DictWriter(fh, ["task_id", "model_name", "seed", *hp_cols, *metric_cols])
        writer.writeheader()
        for rec in corpus.records:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row(rec).items()})


def fit_standardizer(configs: EvaluationCorpus | Sequence[ModelConfig],
                     schema: HyperparameterSchema = DEFAULT_SCHEMA) -> Standardizer:
    """Per-feature population mean/std over the distinct configs defining each feature."""
    if isinstance(configs, EvaluationCorpus):
        schema = configs.schema
        configs = configs.configs()
    else:
        configs = list(dict.fromkeys(configs))
    if not configs:
        raise ValueError("cannot fit a standardizer on no configs")
    means, stds, flags = [], [], []
    for name in schema.feature_names:
        vals = np.array([c.feature_values()[name] for c in configs if name in c.feature_values()])
        # constant is decided exactly; a summed mean can be off by an ulp
        const = vals.size == 0 or bool(vals.min() == vals.max())
        mu = 0.0 if vals.size == 0 else float(vals[0]) if const else float(vals.mean())
        sd = 0.0 if const else float(vals.std())
        means.append(mu)
        stds.append(1.0 if const else sd)
        flags.append(const)
    return Standardizer(tuple(means), tuple(stds), tuple(flags))


def vectorize_config(config: ModelConfig, schema: HyperparameterSchema, std: Standardizer) -> np.ndarray:
    """Encode a config as ``[one-hot model | standardized features]``; undefined features are 0."""
    try:
        model_idx = schema.model_names.index(config.model_name)
    except ValueError:
        raise KeyError(f"unknown model {config.model_name!r}") from None
    out = np.zeros(schema.dim)
    out[model_idx] = 1.0
    offset = len(schema.model_names)
    for name, value in config.feature_values().items():
        try:
            j = schema.feature_names.index(name)
        except ValueError:
            raise KeyError(f"hyperparameter {name!r} not in schema") from None
        out[offset + j] = (value - std.mean[j]) / std.std[j]
    return out


def vectorize_all(configs: Sequence[ModelConfig], schema: HyperparameterSchema, std: Standardizer) -> np.ndarray:
    return np.array([vectorize_config(c, schema, std) for c in configs]).reshape(len(configs), schema.dim)


# Capacity settings (small, medium, large) and context-length multiples per deep model.
_DEEP_GRID: dict[str, tuple[tuple[float, ...], list[dict[str, float]]]] = {
    "DeepAR": ((1, 2, 4), [
        {"deepar_num_layers": 1, "deepar_num_cells": 20},
        {"deepar_num_layers": 2, "deepar_num_cells": 40},
        {"deepar_num_layers": 4, "deepar_num_cells": 80},
    ]),
    "MQ-CNN": ((2, 4, 8), [
        {"mqcnn_num_filters": 20, "mqcnn_kernel_size_1": 3, "mqcnn_kernel_size_2": 3, "mqcnn_kernel_size_3": 2},
        {"mqcnn_num_filters": 30, "mqcnn_kernel_size_1": 7, "mqcnn_kernel_size_2": 3, "mqcnn_kernel_size_3": 3},
        {"mqcnn_num_filters": 40, "mqcnn_kernel_size_1": 14, "mqcnn_kernel_size_2": 7, "mqcnn_kernel_size_3": 3},
    ]),
    "MQ-RNN": ((2, 4, 8), [{}]),
    "N-BEATS": ((1, 2, 4), [
        {"nbeats_num_stacks": 4, "nbeats_num_blocks": 5},
        {"nbeats_num_stacks": 30, "nbeats_num_blocks": 1},
        {"nbeats_num_stacks": 30, "nbeats_num_blocks": 2},
    ]),
    "SimpleFeedForward": ((1, 2, 4), [
        {"sff_hidden_dim": 30, "sff_num_layers": 1},
        {"sff_hidden_dim": 40, "sff_num_layers": 2},
        {"sff_hidden_dim": 80, "sff_num_layers": 3},
    ]),
    "TFT": ((1, 2, 4), [
        {"tft_hidden_dim": 16, "tft_num_heads": 2},
        {"tft_hidden_dim": 32, "tft_num_heads": 4},
        {"tft_hidden_dim": 64, "tft_num_heads": 8},
    ]),
}
CHECKPOINT_FRACTIONS = tuple(3.0 ** -k for k in range(5))
LEARNING_RATE = 1e-3


def benchmark_configs() -> list[ModelConfig]:
    """The 247-config benchmark model space (7 classical + 48 deep x 5 checkpoints)."""
    out = [ModelConfig.make(name) for name in CLASSICAL_MODELS]
    for name in DEEP_MODELS:
        contexts, settings = _DEEP_GRID[name]
        for setting, ctx, frac in product(settings, contexts, CHECKPOINT_FRACTIONS):
            hps = {**setting, "context_length_multiple": ctx, "learning_rate": LEARNING_RATE}
            out.append(ModelConfig.make(name, hps, frac))
    return out


def is_default_config(config: ModelConfig) -> bool:
    """Classical models, or deep models at medium capacity, smallest context and full training."""
    if config.model_name in CLASSICAL_MODELS:
        return True
    contexts, settings = _DEEP_GRID.get(config.model_name, ((), []))
    if not settings:
        return False
    medium = settings[len(settings) // 2]
    hp = config.hp
    return (all(hp.get(k) == v for k, v in medium.items())
            and hp.get("context_length_multiple") == contexts[0]
            and config.training_fraction in (None, 1.0))
