"""A few seconds of internal consistency checks, run by ``hofmn selftest``."""

from __future__ import annotations

import numpy as np

from .attack import baseline_config, fmn_run
from .evaluation import RobustnessCurve, binary_search_min_eps, curve_export, curve_query
from .losses import LossKind, loss_head
from .model import finite_diff_gradient, init_model, input_gradient
from .testbeds import linear_testbed


def _gradients() -> bool:
    rng = np.random.default_rng(0)
    model = init_model((5, 8, 4), seed=1)
    x = rng.uniform(0.2, 0.8, size=5)
    for kind in LossKind:
        head = loss_head(kind, np.array([0]))
        g = input_gradient(model, x, head)
        fd = finite_diff_gradient(model, x, head)
        if np.linalg.norm(g - fd) > 1e-4 * max(np.linalg.norm(fd), 1e-12):
            return False
    return True


def _linear_oracle() -> bool:
    model, X, y, eps = linear_testbed(seed=0, n=20)
    r = fmn_run(model, X, y, baseline_config())
    return bool(np.mean(np.abs(r.best_norm - eps) <= 0.02 * eps) >= 0.9)


def _bisection() -> bool:
    res = binary_search_min_eps(lambda e: e >= 0.07, 0.0, 32 / 255, 5)
    return bool(res.found[0] and res.lo[0] <= 0.07 <= res.hi[0]
                and res.hi[0] - res.lo[0] == (32 / 255) / 32)


def _curve_roundtrip() -> bool:
    rng = np.random.default_rng(0)
    norms = np.where(rng.random(30) < 0.8, rng.uniform(0, 0.1, 30), np.inf)
    curve = RobustnessCurve(norms, np.isfinite(norms))
    rows = curve_export(curve, np.linspace(0, 0.12, 7))
    probes = np.concatenate([rng.uniform(0, 0.15, 200), norms[np.isfinite(norms)]])
    return all(curve_query(rows, e) == curve.robust_accuracy(e) for e in probes)


CHECKS = (
    ("input gradients match finite differences", _gradients),
    ("linear model closed-form minimum recovered", _linear_oracle),
    ("bisection brackets a known threshold", _bisection),
    ("curve export round trip", _curve_roundtrip),
)


def run_selftest(report=print) -> bool:
    ok = True
    for name, check in CHECKS:
        passed = check()
        ok &= passed
        report(f"{'PASS' if passed else 'FAIL'}  {name}")
    return ok
