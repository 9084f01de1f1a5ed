import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hofmn.attack import (
    AttackConfig,
    baseline_config,
    eps_step,
    fmn_run,
    gamma_schedule,
    perturbation_norm,
    project_feasible,
    project_gradient_l2,
    project_gradient_linf,
)
from hofmn.errors import UnsupportedConfigError
from hofmn.evaluation import replay_check
from hofmn.losses import LossKind
from hofmn.model import forward, init_model, linear_model
from hofmn.steppers import OptimizerHypers, OptimizerKind, SchedulerHypers, SchedulerKind
from hofmn.testbeds import linear_min_linf


def test_linf_direction_examples():
    np.testing.assert_array_equal(project_gradient_linf([0.3, -2.0, 0.0]), [1, -1, 0])
    np.testing.assert_array_equal(project_gradient_linf(np.zeros(3)), np.zeros(3))


def test_l2_direction_examples():
    np.testing.assert_allclose(project_gradient_l2([3.0, 4.0]), [0.6, 0.8])
    np.testing.assert_array_equal(project_gradient_l2(np.zeros(2)), np.zeros(2))


def test_directions_beat_random_search(rng):
    for _ in range(10):
        g = rng.normal(size=3)
        v_inf = rng.uniform(-1, 1, size=(10_000, 3))
        assert project_gradient_linf(g) @ g >= (v_inf @ g).max()
        v2 = rng.normal(size=(10_000, 3))
        v2 /= np.maximum(1.0, np.linalg.norm(v2, axis=1, keepdims=True))
        assert project_gradient_l2(g) @ g >= (v2 @ g).max() - 1e-12
        assert np.linalg.norm(project_gradient_l2(g)) == pytest.approx(1.0, abs=1e-12)


def test_gamma_schedule():
    K = 200
    assert gamma_schedule(0.05, K, K) == pytest.approx(0.001, abs=1e-15)
    assert gamma_schedule(0.05, 1, K) == pytest.approx(0.05, abs=1e-5)
    g = [gamma_schedule(0.05, k, K) for k in range(1, K + 1)]
    assert all(a >= b for a, b in zip(g, g[1:]))
    for k in (0, K + 1):
        with pytest.raises(ValueError):
            gamma_schedule(0.05, k, K)


def test_eps_step_examples():
    assert eps_step(0.1, 0.05, True, 0.2) == pytest.approx(0.095)
    assert eps_step(0.1, 0.05, False, 0.2) == pytest.approx(0.105)
    assert eps_step(math.inf, 0.05, True, 0.3) == pytest.approx(0.285)
    assert eps_step(math.inf, 0.05, False, 0.3) == math.inf
    assert eps_step(0.5, 0.05, True, 0.3, best_norm=0.2) == pytest.approx(0.19)


def test_project_feasible_example():
    np.testing.assert_allclose(project_feasible(np.array([0.9]), np.array([0.5]), 0.3), [0.1])


def test_project_feasible_infinite_eps_only_clips_to_box():
    x, d = np.array([0.2, 0.8]), np.array([0.5, -0.1])
    np.testing.assert_array_equal(project_feasible(x, d, math.inf), d)


@given(arrays(np.float64, 5, elements=st.floats(0, 1)),
       arrays(np.float64, 5, elements=st.floats(-2, 2)),
       st.floats(0, 1.5), st.sampled_from(["linf", "l2"]))
@settings(max_examples=1000, deadline=None)
def test_project_feasible_properties(x, d, eps, norm):
    out = project_feasible(x, d, eps, norm)
    assert np.all(x + out >= 0) and np.all(x + out <= 1)
    assert perturbation_norm(out, norm) <= eps * (1 + 1e-12) + 1e-15
    assert np.array_equal(project_feasible(x, out, eps, norm), out)


def test_invalid_configs_rejected_early():
    with pytest.raises(UnsupportedConfigError):
        AttackConfig(optimizer=OptimizerHypers(OptimizerKind.ADAM), scheduler=SchedulerHypers(SchedulerKind.CALR))
    with pytest.raises(UnsupportedConfigError):
        AttackConfig(norm="l1")
    with pytest.raises(ValueError):
        AttackConfig(steps=0)
    m = linear_model(np.eye(2))
    with pytest.raises(UnsupportedConfigError):
        fmn_run(m, np.full((1, 2), 0.5), [0], AttackConfig(loss=LossKind.DLR))


def test_natively_misclassified_sample_has_zero_norm():
    m = linear_model(np.eye(2))
    r = fmn_run(m, np.array([[0.2, 0.9]]), [0], baseline_config(20))
    assert r.success[0] and r.best_norm[0] == 0.0 and np.all(r.best_delta[0] == 0)
    assert not r.clean_correct[0]


def test_unattackable_model_fails():
    m = linear_model(np.zeros((3, 4)), b=[1.0, 0.0, 0.0])
    r = fmn_run(m, np.full((5, 4), 0.5), np.zeros(5, dtype=int), baseline_config(50))
    assert not r.success.any() and np.all(np.isinf(r.best_norm))


def test_two_class_linear_closed_form(rng):
    W = rng.normal(size=(2, 10))
    b = rng.normal(size=2) * 0.3
    m = linear_model(W, b)
    X, y, eps = [], [], []
    while len(X) < 100:
        x = rng.uniform(0.3, 0.7, size=10)
        label = int(np.argmax(W @ x + b))
        e, _ = linear_min_linf(W, b, x, label)
        if 0.01 <= e <= 0.1:
            X.append(x), y.append(label), eps.append(e)
    r = fmn_run(m, np.array(X), np.array(y), baseline_config())
    close = np.abs(r.best_norm - np.array(eps)) <= 0.02 * np.array(eps)
    assert close.mean() >= 0.95


def test_linear_oracle_flips_just_past_the_minimum(linear_bed):
    m, X, y, eps = linear_bed
    W, b = m.weights[0], m.biases[0]
    for x, label, e in zip(X, y, eps):
        _, j = linear_min_linf(W, b, x, label)
        direction = np.sign(W[j] - W[label])
        assert np.argmax(forward(m, x + (e + 1e-6) * direction)) != label
        assert np.argmax(forward(m, x + (e - 1e-6) * direction)) == label


@pytest.mark.parametrize("loss", list(LossKind))
@pytest.mark.parametrize("opt,sched", [("gd", "calr"), ("gd", "rlrop"), ("adam", "fixed"), ("adamax", "fixed")])
def test_results_are_sound_and_batch_independent(loss, opt, sched, rng):
    m = init_model((4, 16, 3), seed=7)
    X = rng.uniform(0.05, 0.95, size=(12, 4))
    y = rng.integers(0, 3, size=12)
    cfg = AttackConfig(loss, OptimizerHypers(opt, lr=0.1, weight_decay=0.01),
                       SchedulerHypers(sched, factor=0.5, patience=2) if sched == "rlrop" else SchedulerHypers(sched),
                       steps=40)
    r = fmn_run(m, X, y, cfg)
    assert np.all(replay_check(m, X, y, r))
    for i in range(len(X)):
        one = fmn_run(m, X[i], y[i], cfg)
        assert np.array_equal(one.best_delta[0], r.best_delta[i])
        assert np.array_equal(one.best_norm[0], r.best_norm[i])
    threaded = fmn_run(m, X, y, cfg, threads=4)
    assert np.array_equal(threaded.best_norm, r.best_norm)
    assert np.array_equal(threaded.best_delta, r.best_delta)


def test_trace_shows_monotone_best_norm(rng):
    m = init_model((4, 16, 3), seed=3)
    X = rng.uniform(0.1, 0.9, size=(6, 4))
    y = np.argmax(forward(m, X), axis=1)
    r = fmn_run(m, X, y, baseline_config(60), trace=True)
    assert len(r.trace) == 6 * 61
    for i in range(6):
        rows = [t for t in r.trace if t[0] == i]
        best, running = math.inf, []
        for _, _, norm, loss, _, _ in rows:
            if loss < 0:  # LL negative means misclassified
                best = min(best, norm)
            running.append(best)
        assert all(a >= b for a, b in zip(running, running[1:]))
        assert running[-1] == r.best_norm[i]


def test_l2_mode_runs_and_is_sound(rng):
    m = init_model((4, 16, 3), seed=3)
    X = rng.uniform(0.1, 0.9, size=(8, 4))
    y = np.argmax(forward(m, X), axis=1)
    r = fmn_run(m, X, y, AttackConfig(norm="l2", optimizer=OptimizerHypers(lr=0.1), steps=80))
    assert r.success.all()
    assert np.all(replay_check(m, X, y, r, norm="l2"))
