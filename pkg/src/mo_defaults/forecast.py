"""Quantile forecast scoring and ensemble construction.

Forecasts are stored as the nine deciles ``q10..q90`` per ``(series, step)``.
CRPS is approximated by the mean pinball loss over those levels and nCRPS
normalizes the summed CRPS by the summed absolute actuals.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .eval_store import ModelConfig

LEVELS = np.round(np.arange(1, 10) / 10.0, 1)
QUANTILE_COLUMNS = tuple(f"q{int(round(a * 100))}" for a in LEVELS)
# relative slack on budget comparisons so millisecond/second conversions do not flip decisions
BUDGET_RTOL = 1e-9


class InfeasibleBudget(ValueError):
    pass


def quantile_loss(alpha: float, q: float, z: float) -> float:
    """Pinball loss ``(alpha - 1[z < q]) * (z - q)``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {alpha}")
    return (alpha - (1.0 if z < q else 0.0)) * (z - q)


def _pinball(q: np.ndarray, z: np.ndarray) -> np.ndarray:
    # q: (..., 9), z: (...,)
    diff = z[..., None] - q
    return (LEVELS - (diff < 0)) * diff


def crps_approx(q9: Sequence[float], z: float) -> float:
    q = np.asarray(q9, dtype=float)
    if q.shape != (len(LEVELS),):
        raise ValueError(f"expected {len(LEVELS)} quantiles, got shape {q.shape}")
    return float(_pinball(q, np.asarray(float(z))).mean())


@dataclass
class ForecastQuantileSet:
    """Decile forecasts; rows follow ``keys`` which are sorted ``(series_id, step)`` pairs."""

    keys: list[tuple[str, int]]
    values: np.ndarray
    rearranged: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.keys), len(LEVELS))
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("duplicate (series_id, step) keys")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite quantile values")
        crossing = np.any(np.diff(self.values, axis=1) < 0, axis=1)
        if crossing.any():
            self.values = np.sort(self.values, axis=1)
            self.rearranged += int(crossing.sum())
        order = sorted(range(len(self.keys)), key=lambda i: self.keys[i])
        self.keys = [self.keys[i] for i in order]
        self.values = self.values[order]

    @property
    def horizon(self) -> int:
        return len({step for _, step in self.keys})

    @classmethod
    def from_csv(cls, path: str | Path) -> "ForecastQuantileSet":
        keys, rows = [], []
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in ("series_id", "step", *QUANTILE_COLUMNS) if c not in (reader.fieldnames or [])]
            if missing:
                raise ValueError(f"{path}: missing columns {missing}")
            for row in reader:
                keys.append((row["series_id"], int(row["step"])))
                rows.append([float(row[c]) for c in QUANTILE_COLUMNS])
        return cls(keys, np.array(rows))

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["series_id", "step", *QUANTILE_COLUMNS])
            for (sid, step), row in zip(self.keys, self.values):
                w.writerow([sid, step, *map(repr, row.tolist())])


@dataclass
class ActualSet:
    keys: list[tuple[str, int]]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.keys))
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("duplicate (series_id, step) keys")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite actual values")
        order = sorted(range(len(self.keys)), key=lambda i: self.keys[i])
        self.keys = [self.keys[i] for i in order]
        self.values = self.values[order]

    @classmethod
    def from_csv(cls, path: str | Path) -> "ActualSet":
        keys, vals = [], []
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                keys.append((row["series_id"], int(row["step"])))
                vals.append(float(row["value"]))
        return cls(keys, np.array(vals))

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["series_id", "step", "value"])
            for (sid, step), v in zip(self.keys, self.values):
                w.writerow([sid, step, repr(float(v))])


def ncrps(fc: ForecastQuantileSet, act: ActualSet) -> float:
    if fc.keys != act.keys:
        raise KeyError("forecast and actual keys differ")
    denom = float(np.abs(act.values).sum())
    if denom == 0.0:
        raise ZeroDivisionError("sum of absolute actuals is zero")
    crps = _pinball(fc.values, act.values).mean(axis=1)
    return float(crps.sum() / denom)


def average_quantile_ensemble(fcs: Sequence[ForecastQuantileSet]) -> ForecastQuantileSet:
    """Uniform average of member quantiles per series, step and level."""
    if not fcs:
        raise ValueError("no ensemble members")
    keys = fcs[0].keys
    for f in fcs[1:]:
        if f.keys != keys:
            raise KeyError("ensemble members cover different (series_id, step) keys")
    return ForecastQuantileSet(list(keys), np.mean([f.values for f in fcs], axis=0))


@dataclass
class EnsembleSpec:
    members: list[ModelConfig]
    latency_budget: float | None
    predicted_ncrps: list[float]
    latencies: list[float]

    def __post_init__(self):
        if not 1 <= len(self.members) <= 10:
            raise ValueError(f"ensembles hold 1 to 10 members, got {len(self.members)}")
        if self.latency_budget is not None:
            if math.fsum(self.latencies) > self.latency_budget * (1 + BUDGET_RTOL):
                raise ValueError("member latencies exceed the budget")

    @property
    def total_latency(self) -> float:
        return math.fsum(self.latencies)

    def to_json(self) -> dict:
        return {
            "members": [{"model_name": c.model_name, "hyperparameters": c.hp,
                         "training_fraction": c.training_fraction, "id": c.slug(), "label": c.label()}
                        for c in self.members],
            "budget": self.latency_budget,
            "total_latency": self.total_latency,
            "latencies": self.latencies,
            "predicted_ncrps": self.predicted_ncrps,
        }


def constrained_ensemble_select(candidates: Sequence[tuple[ModelConfig, float, float]],
                                budget: float | None = None, max_members: int = 10) -> EnsembleSpec:
    """Greedy by ascending predicted nCRPS, skipping members that would exceed the budget.

    ``candidates`` holds ``(config, predicted_ncrps, latency)`` triples; the
    budget is in the same unit as the latencies.
    """
    order = sorted(range(len(candidates)), key=lambda i: (candidates[i][1], i))
    members, preds, lats = [], [], []
    total = 0.0
    for i in order:
        config, pred, lat = candidates[i]
        if lat < 0 or not math.isfinite(pred):
            raise ValueError(f"invalid candidate {config.label()}: latency {lat}, prediction {pred}")
        if budget is not None and total + lat > budget * (1 + BUDGET_RTOL):
            continue
        members.append(config)
        preds.append(float(pred))
        lats.append(float(lat))
        total += lat
        if len(members) == max_members:
            break
    if not members:
        raise InfeasibleBudget(f"infeasible budget {budget}: no candidate fits")
    return EnsembleSpec(members, budget, preds, lats)


def write_ensemble(spec: EnsembleSpec, path: str | Path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps({**spec.to_json(), **(extra or {})}, indent=2) + "\n")
