"""Random linear classifiers with a closed-form l-inf minimum perturbation."""

from __future__ import annotations

import numpy as np

from .model import linear_model


def linear_min_linf(W, b, x, y) -> tuple[float, int]:
    """Smallest l-inf perturbation that lets another class tie the true one.

    For ``f(x) = W x + b`` moving towards class ``j`` changes the margin
    ``f_y - f_j`` by at most ``eps * ||w_y - w_j||_1``, so the minimum is
    ``min_j (f_y - f_j) / ||w_y - w_j||_1``. The box ``[0, 1]^d`` is ignored;
    callers keep ``x`` far enough from its faces.
    """
    W = np.asarray(W, dtype=np.float64)
    z = W @ x + b
    best, arg = np.inf, -1
    for j in range(len(W)):
        if j == y:
            continue
        e = (z[y] - z[j]) / np.abs(W[y] - W[j]).sum()
        if e < best:
            best, arg = e, j
    return float(best), arg


def linear_testbed(seed: int = 0, n: int = 100, d: int = 20, Y: int = 4, low: float = 0.3,
                   high: float = 0.7, eps_range=(0.01, 0.1)):
    """Draw a Gaussian linear classifier and ``n`` correctly labelled samples.

    Samples are uniform on ``[low, high]^d`` and kept only when their
    closed-form minimum lies in ``eps_range``; with the default bounds the
    minimal perturbation never touches the unit box.

    Returns ``(model, X, y, eps_star)``.
    """
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(Y, d))
    b = 0.5 * rng.normal(size=Y)
    X, ys, es = [], [], []
    tries = 0
    while len(X) < n:
        tries += 1
        if tries > 1000 * n:
            raise RuntimeError("eps_range too narrow for this classifier")
        x = rng.uniform(low, high, size=d)
        y = int(np.argmax(W @ x + b))
        e, _ = linear_min_linf(W, b, x, y)
        if eps_range[0] <= e <= eps_range[1]:
            X.append(x)
            ys.append(y)
            es.append(e)
    return linear_model(W, b), np.array(X), np.array(ys), np.array(es)

