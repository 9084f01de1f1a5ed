import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hofmn.attack import AttackResult, baseline_config, fmn_run
from hofmn.evaluation import (
    FixedBudgetConfig,
    RobustnessCurve,
    binary_search_min_eps,
    bisect_fixed_budget,
    compare_report,
    curve_export,
    curve_query,
    fixed_budget_attack,
    load_result,
    read_curve_csv,
    replay_check,
    save_result,
    write_curve_csv,
    write_report_csv,
)
from hofmn.hyperopt import median_norm
from hofmn.model import linear_model

norm_lists = st.lists(st.one_of(st.floats(0, 1), st.just(math.inf)), min_size=1, max_size=40)


def curve_of(norms):
    norms = np.asarray(norms, dtype=float)
    return RobustnessCurve(norms, np.isfinite(norms))


def recount(norms, eps):
    norms = np.asarray(norms, dtype=float)
    return sum(1 for v in norms if math.isfinite(v) and v < eps) / len(norms)


def test_hand_examples():
    c = curve_of([0.01, 0.03, math.inf])
    assert c.attack_success_rate(0.02) == pytest.approx(1 / 3)
    assert c.robust_accuracy(0.02) == pytest.approx(2 / 3)
    assert c.attack_success_rate(0.0) == 0.0
    assert c.robust_accuracy(0.0) == 1.0
    with pytest.raises(ValueError):
        c.attack_success_rate(-0.1)


def test_zero_norms_count_for_every_positive_budget():
    c = curve_of([0.0, 0.0, 0.5])
    assert c.attack_success_rate(1e-300) == pytest.approx(2 / 3)


def test_records_are_sorted_with_failures_last():
    c = curve_of([0.3, math.inf, 0.1, 0.2])
    assert list(c.norms) == [0.1, 0.2, 0.3, math.inf]
    assert list(c.success) == [True, True, True, False]


def test_success_rate_equals_brute_force_recount(rng):
    for _ in range(20):
        n = int(rng.integers(1, 60))
        norms = np.where(rng.random(n) < 0.8, rng.uniform(0, 0.2, n), np.inf)
        norms[rng.random(n) < 0.1] = 0.0
        c = curve_of(norms)
        for eps in np.concatenate([rng.uniform(0, 0.25, 45), norms[np.isfinite(norms)][:5]]):
            assert c.attack_success_rate(eps) == recount(norms, eps)


@given(norm_lists, st.floats(0, 2), st.floats(0, 2))
@settings(max_examples=1000, deadline=None)
def test_robust_accuracy_is_monotone_and_complementary(norms, e1, e2):
    c = curve_of(norms)
    lo, hi = sorted((e1, e2))
    assert c.robust_accuracy(lo) >= c.robust_accuracy(hi)
    assert abs(c.robust_accuracy(lo) + c.attack_success_rate(lo) - 1.0) <= 1e-12


def test_export_single_sample_example():
    rows = curve_export(curve_of([0.1]), [0.05, 0.15])
    assert rows == [(0.05, 1.0), (0.1, 0.0), (0.15, 0.0)]
    assert curve_query(rows, 0.1) == 1.0  # strict inequality: norm 0.1 does not count at eps 0.1
    assert curve_query(rows, 0.1 + 1e-12) == 0.0


def test_export_empty_grid_gives_breakpoints_only():
    rows = curve_export(curve_of([0.2, 0.1, 0.1, math.inf]), [])
    assert [e for e, _ in rows] == [0.1, 0.2]


@given(norms=norm_lists, grid=st.lists(st.floats(0, 1.5), max_size=10),
       probes=st.lists(st.floats(0, 1.5), max_size=30))
@settings(max_examples=300, deadline=None)
def test_export_roundtrip_reproduces_the_step_function(norms, grid, probes, tmp_path_factory):
    c = curve_of(norms)
    rows = curve_export(c, sorted(grid))
    ras = [ra for _, ra in rows]
    assert all(a >= b for a, b in zip(ras, ras[1:]))
    path = tmp_path_factory.mktemp("curve") / "c.csv"
    write_curve_csv(rows, path, ["header"])
    back = read_curve_csv(path)
    assert back == rows
    finite = [v for v in norms if math.isfinite(v)]
    for eps in probes + finite + [np.nextafter(v, 2) for v in finite]:
        assert curve_query(back, eps) == c.robust_accuracy(eps)


def test_export_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        curve_export(curve_of([0.1]), [0.2, 0.1])


def test_result_file_roundtrip(tmp_path, linear_bed):
    model, X, y, _ = linear_bed
    r = fmn_run(model, X[:20], y[:20], baseline_config(50))
    save_result(r, tmp_path / "r.csv", ["provenance"])
    back = load_result(tmp_path / "r.csv")
    assert np.array_equal(back.best_norm, r.best_norm)
    assert np.array_equal(back.best_delta, r.best_delta)
    assert np.array_equal(back.clean_correct, r.clean_correct)
    a, b = RobustnessCurve.from_result(r), RobustnessCurve.from_result(back)
    assert np.array_equal(a.norms, b.norms) and np.array_equal(a.success, b.success)
    assert np.all(replay_check(model, X[:20], y[:20], back))


def test_replay_flags_a_tampered_result(linear_bed):
    model, X, y, _ = linear_bed
    r = fmn_run(model, X[:5], y[:5], baseline_config(50))
    bad = AttackResult(np.zeros_like(r.best_delta), r.best_norm.copy(), r.clean_correct)
    assert not replay_check(model, X[:5], y[:5], bad).any()


# --------------------------------------------------------------------------
# fixed-budget subject


def test_fixed_budget_zero_eps_succeeds_only_when_misclassified():
    m = linear_model(np.eye(2))
    X = np.array([[0.2, 0.9], [0.9, 0.2]])
    res = fixed_budget_attack(m, X, [0, 0], FixedBudgetConfig(), epsilon=0.0)
    assert list(res.success) == [True, False]


def test_fixed_budget_config_validation():
    with pytest.raises(ValueError):
        FixedBudgetConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        FixedBudgetConfig(steps=0)


def test_fixed_budget_beyond_the_minimum_succeeds(linear_bed):
    model, X, y, eps = linear_bed
    fmn = fmn_run(model, X, y, baseline_config())
    res = fixed_budget_attack(model, X, y, FixedBudgetConfig(), epsilon=fmn.best_norm * 1.01)
    assert res.success.all()
    adv = X + res.delta
    assert np.all(np.abs(res.delta).max(1) <= fmn.best_norm * 1.01 + 1e-15)
    assert np.all(np.argmax(adv @ model.weights[0].T + model.biases[0], axis=1) != y)


def test_fixed_budget_success_is_monotone_in_eps(linear_bed):
    model, X, y, _ = linear_bed
    grid = np.linspace(0.002, 0.125, 30)
    hits = np.array([fixed_budget_attack(model, X, y, FixedBudgetConfig(), e).success for e in grid])
    assert np.all(np.diff(hits.astype(int), axis=0) >= 0)


# --------------------------------------------------------------------------
# bisection


def test_bisection_brackets_known_threshold():
    res = binary_search_min_eps(lambda e: e >= 0.07, 0.0, 32 / 255, 5)
    assert res.found[0]
    assert res.hi[0] - res.lo[0] == (32 / 255) / 32
    assert res.lo[0] <= 0.07 <= res.hi[0]
    assert res.probes[0][0][0] == 16 / 255


def test_bisection_never_succeeding_is_not_found():
    res = binary_search_min_eps(lambda e: False, 0.0, 32 / 255, 5)
    assert not res.found[0]
    with pytest.raises(ValueError):
        binary_search_min_eps(lambda e: True, 0.1, 0.1, 5)


def test_bisection_success_only_at_the_top_is_found():
    res = binary_search_min_eps(lambda e: e >= 32 / 255, 0.0, 32 / 255, 5)
    assert res.found[0] and res.checked_high[0]


@given(st.floats(0.0, 1.0), st.floats(0.01, 1.0), st.floats(0, 1), st.integers(1, 20))
@settings(max_examples=300, deadline=None)
def test_bisection_width_halves_and_keeps_threshold(lo, span, frac, steps):
    hi = lo + span
    thr = lo + frac * span
    widths = []

    def oracle(e):
        widths.append(e)
        return e >= thr

    res = binary_search_min_eps(oracle, lo, hi, steps)
    if frac > 0:
        assert res.lo[0] <= thr <= res.hi[0]
    assert res.hi[0] - res.lo[0] == pytest.approx(span / 2**steps, rel=1e-9)


def test_bisection_contains_linear_minimum(linear_bed):
    model, X, y, eps = linear_bed
    res = bisect_fixed_budget(model, X, y, FixedBudgetConfig())
    assert np.mean((res.lo <= eps) & (eps <= res.hi)) >= 0.95
    fmn = fmn_run(model, X, y, baseline_config())
    both = res.found & fmn.success
    assert np.all(fmn.best_norm[both] <= res.hi[both] + 1e-6)


# --------------------------------------------------------------------------
# report


def test_compare_report_accounting(linear_bed, tmp_path):
    model, X, y, _ = linear_bed
    fb = FixedBudgetConfig()
    fmn = fmn_run(model, X, y, baseline_config())
    res = bisect_fixed_budget(model, X, y, fb)
    rows = compare_report(fmn.best_norm, res, fb.steps, fmn.steps)
    assert [r.method for r in rows] == ["fmn"] + [f"bisection-{i}" for i in range(1, 6)]
    assert rows[0].median_norm == median_norm(fmn.best_norm)
    assert rows[-1].attack_steps >= 5 * fb.steps
    hi = np.full(len(X), np.inf)
    for (eps, ok), row in zip(res.probes, rows[1:]):
        hi = np.where(ok, eps, hi)
        assert row.median_norm == median_norm(np.where(res.found, np.minimum(hi, res.eps_high), np.inf))
    write_report_csv(rows, tmp_path / "cmp.csv")
    lines = (tmp_path / "cmp.csv").read_text().splitlines()
    assert lines[0] == "method,total_time_s,median_norm,attack_steps" and len(lines) == 7


def test_compare_report_rejects_empty_or_mismatched_inputs():
    res = binary_search_min_eps(lambda e: e >= 0.05, n=3, steps=2, eps_low=0, eps_high=0.1)
    with pytest.raises(ValueError):
        compare_report([], res, 10, 10)
    with pytest.raises(ValueError):
        compare_report([0.1, 0.2], res, 10, 10)
