import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mo_defaults.eval_store import DEFAULT_SCHEMA, ModelConfig, benchmark_configs, fit_standardizer
from mo_defaults.selector import order_from_scores, ranking_metrics
from mo_defaults.surrogate import (
    _forward_cache,
    SurrogateParams,
    TaskRankBatch,
    TrainConfig,
    forward,
    init_surrogate,
    listwise_loss,
    load_params,
    loss_and_gradient,
    nonparametric_baseline,
    objective_loss,
    predict_all,
    save_params,
    train_surrogate,
)
from conftest import make_corpus
from oracles import finite_difference


def naive_listwise(scores, ranking, discounted):
    """Direct transcription of the weighted list log-likelihood."""
    t = [scores[r] for r in ranking]
    total = 0.0
    for i in range(len(t)):
        w = 1.0 / (i + 1) if discounted else 1.0
        total += w * (t[i] + math.log(sum(math.exp(-t[l]) for l in range(i, len(t)))))
    return total


def toy_batches(rng, n_tasks=3, d=28, m=2):
    out = []
    for j in range(n_tasks):
        n = int(rng.integers(2, 9))
        out.append(TaskRankBatch(f"t{j}", rng.normal(size=(n, d)), rng.uniform(size=(n, m))))
    return out


def kink_margin(params, batch):
    """Smallest distance of any hidden pre-activation from the LeakyReLU kink."""
    margin = np.inf
    for b in batch:
        _, (_, z1, _, z2, _) = _forward_cache(params, b.features)
        margin = min(margin, np.abs(z1).min(), np.abs(z2).min())
    return margin


def smooth_instance(rng, m=2, margin=1e-3):
    """Draw toy instances until central differences cannot straddle a kink."""
    while True:
        params = init_surrogate(m, seed=int(rng.integers(1 << 30)))
        batch = toy_batches(rng, m=m)
        if kink_margin(params, batch) > margin:
            return params, batch


# loss values

def test_loss_examples():
    assert listwise_loss([3.7], [0]) == 0.0
    assert abs(listwise_loss([0.0, 0.0], [0, 1]) - math.log(2)) < 1e-9
    assert listwise_loss([-10.0, 10.0], [0, 1]) < 1e-8


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.randoms(use_true_random=False),
       st.booleans())
def test_loss_matches_naive(scores, rnd, discounted):
    ranking = list(range(len(scores)))
    rnd.shuffle(ranking)
    assert listwise_loss(scores, ranking, discounted) == pytest.approx(
        naive_listwise(scores, ranking, discounted), rel=1e-10, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.floats(-100, 100), st.booleans())
def test_loss_shift_invariance(scores, c, discounted):
    ranking = np.argsort(scores)
    a = listwise_loss(scores, ranking, discounted)
    b = listwise_loss(np.asarray(scores) + c, ranking, discounted)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


def test_loss_vanishes_with_separation():
    ranking = [2, 0, 1, 3]
    losses = []
    for gap in (1.0, 5.0, 20.0, 40.0):
        scores = np.empty(4)
        scores[ranking] = gap * np.arange(4)
        losses.append(listwise_loss(scores, ranking))
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-15


# gradients

@pytest.mark.parametrize("discounted", [True, False])
def test_listwise_score_gradient(discounted, rng):
    from mo_defaults.surrogate import _listwise_loss_grad
    for _ in range(10):
        n = int(rng.integers(1, 10))
        s = rng.normal(size=n)
        ranking = rng.permutation(n)
        _, g = _listwise_loss_grad(s, ranking, discounted)
        num = finite_difference(lambda x: listwise_loss(x, ranking, discounted), s, range(n), h=1e-6)
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-8)


def gradient_check(params, batch, cfg, n_coords, rng, h=1e-4):
    """Relative errors at random coordinates with a non-vanishing gradient.

    Coordinates whose analytic gradient is exactly zero up to roundoff (for
    example biases the listwise loss is invariant to) have no meaningful
    relative error; for those the numeric estimate must vanish absolutely.
    The five-point stencil at h=1e-4 keeps truncation and roundoff both far
    below 1e-4 relative, and its perturbations stay inside the kink margin.
    """
    _, grad = loss_and_gradient(params, batch, cfg)
    analytic = grad.flat()
    x0 = params.flat()

    def f(x):
        return objective_loss(params.with_flat(x), batch, cfg)

    live = np.flatnonzero(np.abs(analytic) > 1e-9)
    dead = np.flatnonzero(np.abs(analytic) <= 1e-9)
    idx = rng.choice(live, size=n_coords, replace=False)
    numeric = finite_difference(f, x0, idx, h, points=5)
    rel = np.abs(analytic[idx] - numeric) / np.maximum(np.abs(analytic[idx]), np.abs(numeric))
    dead_idx = rng.choice(dead, size=min(len(dead), 10), replace=False)
    dead_err = np.abs(finite_difference(f, x0, dead_idx, h, points=5)) if len(dead_idx) else np.zeros(0)
    return rel, dead_err


@pytest.mark.parametrize("mode", ["listwise-discounted", "listwise-plain", "regression"])
@pytest.mark.parametrize("weight_decay", [0.0, 0.01])
def test_network_gradient_check(mode, weight_decay, rng):
    cfg = TrainConfig(mode=mode, weight_decay=weight_decay)
    for _ in range(5):
        params, batch = smooth_instance(rng)
        rel, dead = gradient_check(params, batch, cfg, 40, rng)
        assert rel.max() < 1e-4
        assert np.all(dead < 1e-8)


@pytest.mark.parametrize("mode", ["listwise-discounted", "listwise-plain"])
def test_listwise_output_bias_gradient_vanishes(mode, rng):
    params = init_surrogate(2, seed=5)
    _, grad = loss_and_gradient(params, toy_batches(rng), TrainConfig(mode=mode, weight_decay=0.0))
    assert np.abs(grad.b3).max() < 1e-12


def test_zero_weight_decay_isolates_loss_gradient(rng):
    params = init_surrogate(1, seed=3)
    batch = toy_batches(rng, m=1)
    _, g0 = loss_and_gradient(params, batch, TrainConfig(weight_decay=0.0))
    _, g1 = loss_and_gradient(params, batch, TrainConfig(weight_decay=0.5))
    np.testing.assert_allclose(g1.W1 - g0.W1, 2 * 0.5 * params.W1)
    np.testing.assert_array_equal(g1.b1, g0.b1)


# parameters and forward pass

def test_init_determinism_and_shapes():
    a, b = init_surrogate(2, seed=1), init_surrogate(2, seed=1)
    for x, y in zip(a.arrays().values(), b.arrays().values()):
        np.testing.assert_array_equal(x, y)
    c = init_surrogate(2, seed=2)
    assert not np.array_equal(a.W1, c.W1)
    assert a.W1.shape == (28, 32) and a.W2.shape == (32, 32) and a.W3.shape == (32, 2)
    assert a.b3.shape == (2,)


def test_params_validation():
    p = init_surrogate(2)
    with pytest.raises(ValueError):
        SurrogateParams(p.W1, p.b1, p.W2, p.b2, p.W3[:, :1], p.b3)
    bad = p.W2.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        SurrogateParams(p.W1, p.b1, bad, p.b2, p.W3, p.b3)


def test_forward_zero_params():
    p = init_surrogate(2)
    zero = p.with_flat(np.zeros_like(p.flat()))
    np.testing.assert_array_equal(forward(zero, np.ones(28)), np.zeros(2))


def test_forward_single_path():
    p = init_surrogate(1)
    z = {k: np.zeros_like(v) for k, v in p.arrays().items()}
    z["W1"][0, 0] = 1.0
    z["W2"][0, 0] = 1.0
    z["W3"][0, 0] = 1.0
    q = SurrogateParams(**z, slope=0.01)
    x = np.zeros(28)
    x[0] = -1.0
    # -1 -> -0.01 -> -0.0001 through two LeakyReLU layers, identity output
    assert forward(q, x)[0] == pytest.approx(-1e-4, abs=1e-15)
    assert forward(q, -x)[0] == 1.0


def test_forward_reports_overflow():
    p = init_surrogate(1)
    huge = p.with_flat(np.full_like(p.flat(), 1e200))
    with pytest.raises(FloatingPointError, match="layer"):
        forward(huge, np.ones(28))


# training

def test_single_config_tasks_only_decay():
    arima = ModelConfig.make("ARIMA")
    corpus = make_corpus({"a": [(arima, 0.1, 0.2)], "b": [(arima, 0.3, 0.1)]})
    cfg = TrainConfig(epochs=3, seed=4)
    history = []
    trained = train_surrogate(corpus, cfg, history=history)
    init = init_surrogate(2, cfg.seeds()[0])
    steps = cfg.epochs * 2 * 2
    factor = (1 - 2 * cfg.learning_rate * cfg.weight_decay) ** steps
    np.testing.assert_allclose(trained.W1, init.W1 * factor, rtol=1e-12)
    np.testing.assert_array_equal(trained.b1, init.b1)
    # the per-step loss is pure weight decay
    assert history[0] > 0
    _, grad = loss_and_gradient(trained, [TaskRankBatch("a", np.ones((1, 28)), [[0.1, 0.2]])],
                                TrainConfig(weight_decay=0.0))
    assert np.all(grad.flat() == 0)


def monotone_corpus(n_tasks=6):
    cells = list(range(10, 70, 2))
    configs = [ModelConfig.make("DeepAR", {"deepar_num_layers": 2, "deepar_num_cells": c}, 1.0) for c in cells]
    table = {}
    for j in range(n_tasks):
        scale = 10.0 ** (j - 3)
        table[f"t{j}"] = [(c, scale * (1 + 0.05 * k), 0.001 * (len(cells) - k))
                          for k, c in enumerate(configs)]
    return make_corpus(table), configs


def test_training_learns_monotone_order():
    corpus, configs = monotone_corpus()
    std = fit_standardizer(corpus)
    params = train_surrogate(corpus, TrainConfig(seed=0), std)
    pred = predict_all(params, configs, corpus.schema, std)
    mrrs = []
    for task in corpus.task_ids:
        task_configs, values = corpus.task_table(task)
        assert task_configs == configs
        for k in range(2):
            mrrs.append(ranking_metrics(order_from_scores(pred[:, k]), values[:, k]).mrr)
    assert np.mean(mrrs) > 0.9


def test_training_is_deterministic():
    corpus, _ = monotone_corpus(3)
    cfg = TrainConfig(epochs=10, seed=7)
    a, b = train_surrogate(corpus, cfg), train_surrogate(corpus, cfg)
    assert a.flat().tobytes() == b.flat().tobytes()
    c = train_surrogate(corpus, TrainConfig(epochs=10, seed=8))
    assert a.flat().tobytes() != c.flat().tobytes()


def test_training_reduces_loss():
    corpus, _ = monotone_corpus(3)
    history = []
    train_surrogate(corpus, TrainConfig(epochs=30), history=history)
    assert history[-1] < history[0]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(weight_decay=-1)
    with pytest.raises(ValueError):
        TrainConfig(mode="pairwise")


def test_rank_batch():
    b = TaskRankBatch("t", np.zeros((3, 28)), [[0.3, 1.0], [0.1, 1.0], [0.2, 0.5]])
    np.testing.assert_array_equal(b.ranks, [[1, 2], [2, 0], [0, 1]])
    np.testing.assert_allclose(b.targets[:, 0], [5 / 6, 1 / 6, 1 / 2])
    with pytest.raises(ValueError):
        TaskRankBatch("t", np.zeros((0, 28)), np.zeros((0, 2)))


# prediction and baselines

def test_predict_all_rows():
    configs = benchmark_configs()
    std = fit_standardizer(configs)
    p = init_surrogate(2, seed=0)
    out = predict_all(p, configs, DEFAULT_SCHEMA, std)
    assert out.shape == (247, 2)
    dup = predict_all(p, [configs[10], configs[10]], DEFAULT_SCHEMA, std)
    np.testing.assert_array_equal(dup[0], dup[1])


def test_nonparametric_baselines(abc_configs):
    a, b, c = abc_configs
    corpus = make_corpus({"t1": [(a, 0.2, 1.0), (b, 0.1, 2.0), (c, 0.05, 3.0)],
                          "t2": [(a, 0.4, 1.0), (b, 0.5, 2.0), (c, 0.6, 3.0)]})
    assert nonparametric_baseline(corpus, "mean-value")([a])[0, 0] == pytest.approx(0.3)
    ranks = nonparametric_baseline(corpus, "mean-rank")([a, c])
    assert ranks[0, 0] == 2.0 and ranks[1, 0] == 2.0
    with pytest.raises(KeyError):
        nonparametric_baseline(corpus)([ModelConfig.make("ETS")])
    with pytest.raises(ValueError):
        nonparametric_baseline(corpus, "median")


def test_save_load_round_trip(tmp_path):
    corpus, configs = monotone_corpus(2)
    std = fit_standardizer(corpus)
    params = train_surrogate(corpus, TrainConfig(epochs=2), std)
    save_params(params, tmp_path / "p.json", DEFAULT_SCHEMA, std)
    loaded, std2 = load_params(tmp_path / "p.json", DEFAULT_SCHEMA)
    assert std2 == std
    np.testing.assert_array_equal(predict_all(loaded, configs, DEFAULT_SCHEMA, std2),
                                  predict_all(params, configs, DEFAULT_SCHEMA, std))
