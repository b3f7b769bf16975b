import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mo_defaults.eval_store import (  # noqa: E402
    EvaluationCorpus,
    EvaluationRecord,
    ModelConfig,
    ObjectiveVector,
)


def make_corpus(table, objectives=("ncrps", "latency")):
    """Build a corpus from ``{task: [(config, values...), ...]}``."""
    records = []
    for task, rows in table.items():
        for config, *values in rows:
            records.append(EvaluationRecord(task, config, 0, ObjectiveVector(tuple(objectives), tuple(values))))
    return EvaluationCorpus(records, objectives)


@pytest.fixture
def abc_configs():
    return [ModelConfig.make("DeepAR", {"deepar_num_layers": 1, "deepar_num_cells": 20}, 1.0),
            ModelConfig.make("TFT", {"tft_hidden_dim": 16, "tft_num_heads": 2}, 1.0),
            ModelConfig.make("ARIMA")]


@pytest.fixture
def ensemble_corpus(abc_configs):
    # A(0.10, 6 ms), B(0.12, 3 ms), C(0.15, 2 ms) on two tasks
    a, b, c = abc_configs
    rows = [(a, 0.10, 0.006), (b, 0.12, 0.003), (c, 0.15, 0.002)]
    return make_corpus({"t1": rows, "t2": rows})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(name, ok, detail):
    """Log one acceptance line; it is echoed in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
