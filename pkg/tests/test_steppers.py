import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hofmn.steppers import (
    GD,
    Adam,
    AdaMax,
    OptimizerHypers,
    OptimizerKind,
    SamplewiseRLRoP,
    SchedulerHypers,
    SchedulerKind,
    StepSchedule,
    calr_alpha,
    fixed_alpha,
    make_optimizer,
)


def gd(**kw):
    return OptimizerHypers(OptimizerKind.GD, **kw)


def test_vanilla_gd_step(rng):
    delta, g = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    opt = GD(gd(), delta.shape)
    np.testing.assert_array_equal(opt.step(delta, g, 0.5), delta - 0.5 * g)


def test_gd_momentum_unrolled_by_hand():
    g = np.ones((1, 1))
    opt = GD(gd(momentum=0.9), g.shape)
    d = opt.step(np.zeros((1, 1)), g, 1.0)
    d = opt.step(d, g, 1.0)
    assert d[0, 0] == pytest.approx(-2.9, abs=1e-15)


def test_gd_weight_decay_pulls_toward_zero():
    opt = GD(gd(weight_decay=0.5), (1, 2))
    out = opt.step(np.array([[0.2, -0.2]]), np.zeros((1, 2)), 1.0)
    np.testing.assert_allclose(out, [[0.1, -0.1]])


def test_adam_first_step_has_size_alpha(rng):
    g = rng.uniform(1e-3, 5, size=(4, 6)) * rng.choice([-1, 1], size=(4, 6))
    for cls, kind in ((Adam, OptimizerKind.ADAM), (AdaMax, OptimizerKind.ADAMAX)):
        opt = cls(OptimizerHypers(kind, weight_decay=0.01, beta1=0.9, beta2=0.999), g.shape)
        out = opt.step(np.zeros_like(g), g, 0.3)
        np.testing.assert_allclose(np.abs(out), 0.3, atol=1e-6)


def test_adamax_matches_reference_recursion(rng):
    h = OptimizerHypers(OptimizerKind.ADAMAX, weight_decay=0.01, beta1=0.8, beta2=0.95)
    gs = rng.normal(size=(5, 1, 3))
    opt = AdaMax(h, (1, 3))
    delta = np.zeros((1, 3))
    m = u = np.zeros(3)
    ref = np.zeros(3)
    for t, g in enumerate(gs, start=1):
        d = g[0] + 0.01 * ref
        m = 0.8 * m + 0.2 * d
        u = np.maximum(0.95 * u, np.abs(d) + 1e-8)
        ref = ref - 0.1 / (1 - 0.8**t) * m / u
        delta = opt.step(delta, g, 0.1)
    np.testing.assert_allclose(delta[0], ref, rtol=1e-13)


def test_zero_step_size_keeps_delta_but_updates_moments(rng):
    delta, g = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    for kind in OptimizerKind:
        opt = make_optimizer(OptimizerHypers(kind, weight_decay=0.01), delta.shape)
        out = opt.step(delta, g, 0.0)
        assert np.array_equal(out, delta)
        state = getattr(opt, "buf", None) if kind is OptimizerKind.GD else opt.m
        assert np.any(state != 0)


def test_negative_step_size_rejected():
    opt = GD(gd(), (2, 2))
    with pytest.raises(ValueError):
        opt.step(np.zeros((2, 2)), np.ones((2, 2)), np.array([0.1, -0.1]))


@pytest.mark.parametrize("kw", [dict(momentum=0.95), dict(dampening=0.3), dict(weight_decay=1.5),
                                dict(lr=0.0)])
def test_gd_ranges_enforced(kw):
    with pytest.raises(ValueError):
        gd(**kw)


def test_adam_ranges_enforced():
    with pytest.raises(ValueError):
        OptimizerHypers(OptimizerKind.ADAM, beta1=1.0)


def test_calr_endpoints():
    assert abs(calr_alpha(0.7, 0, 200) - 0.7) <= 1e-12
    assert abs(calr_alpha(0.7, 100, 200) - 0.35) <= 1e-12
    assert abs(calr_alpha(0.7, 200, 200)) <= 1e-12
    with pytest.raises(ValueError):
        calr_alpha(0.7, 201, 200)


def test_fixed_alpha():
    assert fixed_alpha(0.4, 0, 10) == fixed_alpha(0.4, 10, 10) == 0.4


def test_gd_calr_closed_form_on_constant_gradient(rng):
    K, g = 50, rng.normal(size=(1, 4))
    sched = StepSchedule(SchedulerHypers(SchedulerKind.CALR), 0.2, K, 1)
    opt = GD(gd(lr=0.2), g.shape)
    delta = np.zeros_like(g)
    for k in range(K):
        delta = opt.step(delta, g, sched.alphas(k, None))
    total = sum(calr_alpha(0.2, k, K) for k in range(K))
    np.testing.assert_allclose(delta, -total * g, atol=1e-10)


def rlrop(factor=0.5, patience=2, n=2, alpha0=1.0):
    return SamplewiseRLRoP(SchedulerHypers(SchedulerKind.RLROP, factor=factor, patience=patience), n, alpha0)


def test_rlrop_reduces_only_the_plateaued_sample():
    s = rlrop(alpha0=0.8)
    for k in range(4):
        out = s.update([1.0 - 0.1 * k, 1.0])
    np.testing.assert_array_equal(out, [0.8, 0.4])


def test_rlrop_reduction_count():
    s = rlrop(factor=0.1, patience=5, n=1)
    s.update([1.0])  # sets the best
    for _ in range(3 * 6):
        out = s.update([1.0])
    assert out[0] == pytest.approx(1e-3, rel=1e-12)


def test_rlrop_keeps_weights_while_improving():
    s = rlrop(n=3)
    for k in range(50):
        out = s.update(np.full(3, 10.0 - 0.1 * k))
    assert np.all(out == 1.0)


@given(st.lists(st.lists(st.floats(-5, 5), min_size=3, max_size=3), min_size=1, max_size=60),
       st.sampled_from([0.1, 0.25, 0.5]), st.sampled_from([2, 5, 10]))
@settings(max_examples=100, deadline=None)
def test_rlrop_weights_never_grow_and_are_powers_of_factor(losses, factor, patience):
    s = rlrop(factor=factor, patience=patience, n=3)
    prev = s.w.copy()
    for row in losses:
        s.update(row)
        assert np.all(s.w <= prev)
        prev = s.w.copy()
    powers = np.log(s.w) / np.log(factor)
    np.testing.assert_allclose(powers, np.round(powers), atol=1e-9)


def test_rlrop_hypers_validated():
    with pytest.raises(ValueError):
        SchedulerHypers(SchedulerKind.RLROP, factor=0.05)
    with pytest.raises(ValueError):
        SchedulerHypers(SchedulerKind.RLROP, patience=3)
