import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mo_defaults.eval_store import ModelConfig, benchmark_configs
from mo_defaults.moo import pareto_front
from mo_defaults.selector import (
    greedy_from_matrix,
    greedy_joint_errors,
    greedy_model_free,
    loocv,
    pareto_select,
    prefix_hv_errors,
    random_select,
    ranking_metrics,
    single_objective_select,
    surrogate_ranking_loocv,
)
from mo_defaults.surrogate import TrainConfig
from mo_defaults.synthetic import SyntheticSpec, make_synthetic_corpus
from conftest import make_corpus

POOL = benchmark_configs()


def table_predictor(configs, values):
    table = dict(zip(configs, np.asarray(values, dtype=float)))
    return lambda cands: np.array([table[c] for c in cands])


def random_instance(rng, n_max=50, grid=None):
    n = int(rng.integers(1, n_max + 1))
    configs = [POOL[i] for i in rng.choice(len(POOL), n, replace=False)]
    values = rng.uniform(size=(n, 2))
    if grid:
        values = np.round(values * grid) / grid
    return configs, values


def oracle_errors(configs, values, n, seed=0):
    corpus = make_corpus({"t": [(c, *v) for c, v in zip(configs, values)]})
    res = pareto_select(corpus, configs, n, TrainConfig(seed=seed), predict=table_predictor(configs, values))
    return prefix_hv_errors(res.configs, configs, values)


def test_oracle_front_of_three():
    configs = POOL[:4]
    values = [(0.1, 0.9), (0.9, 0.1), (0.5, 0.5), (0.6, 0.6)]
    errs = oracle_errors(configs, values, 4)
    assert errs[2] == 0.0 and errs[3] == 0.0
    assert errs[0] > errs[1] > 0


@pytest.mark.parametrize("grid", [None, 4])
def test_oracle_zero_error_once_front_is_covered(grid, rng):
    for _ in range(40):
        configs, values = random_instance(rng, grid=grid)
        front = len(pareto_front(values))
        errs = oracle_errors(configs, values, len(configs), seed=int(rng.integers(1000)))
        assert all(e == 0.0 for e in errs[front - 1:])
        assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_n_one_is_a_front_point(rng):
    configs, values = random_instance(rng)
    corpus = make_corpus({"t": [(c, *v) for c, v in zip(configs, values)]})
    res = pareto_select(corpus, configs, 1, predict=table_predictor(configs, values))
    assert len(res.configs) == 1
    assert configs.index(res.configs[0]) in pareto_front(values)


def test_n_exceeding_candidates_is_permutation(rng):
    configs, values = random_instance(rng, n_max=20)
    corpus = make_corpus({"t": [(c, *v) for c, v in zip(configs, values)]})
    res = pareto_select(corpus, configs, len(configs) + 5, predict=table_predictor(configs, values))
    assert sorted(map(configs.index, res.configs)) == list(range(len(configs)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 10_000))
def test_first_layer_equals_predicted_front(seed, data_seed):
    rng = np.random.default_rng(data_seed)
    configs, values = random_instance(rng, n_max=30, grid=5)
    corpus = make_corpus({"t": [(c, *v) for c, v in zip(configs, values)]})
    front = pareto_front(values)
    res = pareto_select(corpus, configs, len(front), TrainConfig(seed=seed),
                        predict=table_predictor(configs, values))
    assert sorted(map(configs.index, res.configs)) == front


def test_pareto_select_rejects_bad_n():
    configs = POOL[:3]
    corpus = make_corpus({"t": [(c, 0.1, 0.1) for c in configs]})
    with pytest.raises(ValueError):
        pareto_select(corpus, configs, 0, predict=lambda c: np.zeros((len(c), 2)))


def test_single_objective_oracle_sorts_by_first_objective():
    configs = POOL[:5]
    values = np.array([(0.3, 0.1), (0.1, 0.9), (0.3, 0.2), (0.2, 0.5), (0.05, 0.4)])
    corpus = make_corpus({"t": [(c, *v) for c, v in zip(configs, values)]})
    res = single_objective_select(corpus, configs, 5, predict=table_predictor(configs, values))
    # ties at 0.3 keep candidate order
    assert [configs.index(c) for c in res.configs] == [4, 1, 3, 0, 2]
    res = single_objective_select(corpus, configs, 2, predict=table_predictor(configs, values),
                                  objective="latency")
    assert [configs.index(c) for c in res.configs] == [0, 2]


# greedy baseline

def test_greedy_example():
    errors = np.array([[0.1, 0.5, 0.4], [0.9, 0.2, 0.4]])
    order = greedy_from_matrix(errors, 3)
    assert order[:2] == [1, 0]
    np.testing.assert_allclose(greedy_joint_errors(errors, order[:2]), [0.7, 0.3])


def test_greedy_single_task_is_ascending():
    errors = np.array([[0.4, 0.1, 0.3, 0.2]])
    assert greedy_from_matrix(errors, 4) == [1, 3, 2, 0]


def test_greedy_truncates_with_warning():
    errors = np.array([[0.1, 0.2]])
    with pytest.warns(UserWarning, match="truncating"):
        assert greedy_from_matrix(errors, 5) == [0, 1]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 12), st.integers(0, 10_000))
def test_greedy_joint_error_non_increasing(t, n, seed):
    errors = np.random.default_rng(seed).uniform(size=(t, n))
    order = greedy_from_matrix(errors, n)
    assert sorted(order) == list(range(n))
    joint = greedy_joint_errors(errors, order)
    assert all(b <= a for a, b in zip(joint, joint[1:]))


def test_greedy_prefers_covering_tasks():
    a, b, c = POOL[:3]
    corpus = make_corpus({"t1": [(a, 0.1, 1.0), (b, 0.5, 1.0)], "t2": [(c, 0.3, 1.0)]})
    picked = greedy_model_free(corpus, [a, b, c], 2)
    assert picked == [a, c]


# random baseline

def test_random_select():
    configs = POOL[:30]
    assert random_select(configs, 10, 3) == random_select(configs, 10, 3)
    assert random_select(configs, 10, 3) != random_select(configs, 10, 4)
    perm = random_select(configs, 30, 0)
    assert sorted(map(configs.index, perm)) == list(range(30))


# prefix errors

def test_prefix_errors_ignore_unevaluated():
    configs = POOL[:2]
    values = np.array([(0.2, 0.8), (0.8, 0.2)])
    errs = prefix_hv_errors([POOL[100], configs[0], configs[1]], configs, values)
    # normalized points (0.25, 0.75), (0.75, 0.25); front volume 0.1875 + 0.1875 - 0.0625
    assert errs[0] == pytest.approx(0.3125)
    assert errs[1] == pytest.approx(0.125)
    assert errs[2] == 0.0


# ranking metrics

def test_ranking_metrics_examples():
    true = np.arange(25) / 25.0
    perfect = ranking_metrics(np.argsort(true), true)
    assert perfect.mrr == 1.0 and perfect.ndcg == pytest.approx(1.0)
    assert perfect.precision_at == {5: 1.0, 10: 1.0, 20: 1.0}
    order = [1, 2, 3, 0] + list(range(4, 25))
    assert ranking_metrics(order, true).mrr == 0.25
    order = [0, 1, 2, 10, 11] + [i for i in range(25) if i not in (0, 1, 2, 10, 11)]
    assert ranking_metrics(order, true).precision_at[5] == pytest.approx(0.6)


def test_ranking_metrics_small_lists_omit_k():
    rep = ranking_metrics([2, 0, 1, 3, 4, 5, 6], np.arange(7.0))
    assert set(rep.precision_at) == {5}
    with pytest.raises(ValueError):
        ranking_metrics([0, 0, 1], [0.1, 0.2, 0.3])


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10_000))
def test_ranking_metrics_bounds_and_invariance(n, seed):
    rng = np.random.default_rng(seed)
    true = rng.uniform(size=n)
    pred = rng.permutation(n)
    rep = ranking_metrics(pred, true)
    assert 0 < rep.mrr <= 1 and 0 <= rep.ndcg <= 1 + 1e-12
    for k, p in rep.precision_at.items():
        assert 0 <= p <= 1 and abs(p * k - round(p * k)) < 1e-12
    again = ranking_metrics(pred, np.exp(3 * true) + 2)
    assert again == rep


# leave-one-task-out

@pytest.fixture(scope="module")
def small_corpus():
    return make_synthetic_corpus(SyntheticSpec(n_tasks=4, n_configs=24, seed=11))


def test_loocv_shapes_and_monotone(small_corpus):
    res = loocv(small_corpus, "random", n_max=8, seeds=(0, 1))
    assert res.curves.shape == (2, 4, 8)
    assert res.folds == small_corpus.task_ids
    assert np.all(np.diff(res.curves, axis=2) <= 0)
    assert res.mean_curve.shape == (8,)
    assert len(list(res.rows())) == 2 * 4 * 8


def test_loocv_oracle_reaches_zero(small_corpus):
    res = loocv(small_corpus, "oracle", n_max=24)
    for f, task in enumerate(small_corpus.task_ids):
        _, values = small_corpus.task_table(task)
        front = len(pareto_front(values))
        assert np.all(res.curves[0, f, front - 1:] == 0.0)


def test_loocv_methods_run(small_corpus):
    cfg = TrainConfig(epochs=5)
    for method in ("pareto", "single", "greedy"):
        res = loocv(small_corpus, method, n_max=5, cfg=cfg)
        assert np.all(np.diff(res.curves, axis=2) <= 0)
        assert np.all(res.curves >= 0)


def test_loocv_two_tasks_two_folds():
    corpus = make_synthetic_corpus(SyntheticSpec(n_tasks=2, n_configs=12))
    res = loocv(corpus, "random", n_max=3, seeds=(0, 1, 2))
    assert res.curves.shape == (3, 2, 3)


def test_loocv_is_deterministic(small_corpus, tmp_path):
    a = loocv(small_corpus, "pareto", n_max=4, cfg=TrainConfig(epochs=3))
    b = loocv(small_corpus, "pareto", n_max=4, cfg=TrainConfig(epochs=3))
    np.testing.assert_array_equal(a.curves, b.curves)
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    assert (tmp_path / "a" / "curves.csv").read_bytes() == (tmp_path / "b" / "curves.csv").read_bytes()


def test_loocv_needs_two_tasks():
    corpus = make_synthetic_corpus(SyntheticSpec(n_tasks=1, n_configs=5))
    with pytest.raises(ValueError):
        loocv(corpus, "random")


def test_surrogate_ranking_loocv_keys(small_corpus):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = surrogate_ranking_loocv(small_corpus, "nonparametric-rank")
    assert set(out) == {"mrr", "ndcg", "precision@5", "precision@10", "precision@20"}
    assert 0 < out["mrr"] <= 1


def test_configs_equal_by_value():
    assert ModelConfig.make("ETS") in POOL
