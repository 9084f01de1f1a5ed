"""Modular fast minimum-norm attack.

Each iteration performs one forward and one backward pass on the current
iterate, uses its adversarial status for both best-tracking and the
epsilon-step, then takes a scheduled optimizer step along the projected
gradient and projects back onto the epsilon-ball intersected with the box.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UnsupportedConfigError
from .losses import LossKind, loss_head, loss_value_and_grad
from .model import Model, _as_batch, forward, value_and_input_gradient
from .steppers import (
    OptimizerHypers,
    OptimizerKind,
    SchedulerHypers,
    SchedulerKind,
    StepSchedule,
    make_optimizer,
)

GAMMA0 = 0.05
GAMMA_MIN = 0.001


@dataclass(frozen=True)
class AttackConfig:
    loss: LossKind = LossKind.LL
    optimizer: OptimizerHypers = field(default_factory=OptimizerHypers)
    scheduler: SchedulerHypers = field(default_factory=SchedulerHypers)
    steps: int = 200
    gamma0: float = GAMMA0
    gamma_min: float = GAMMA_MIN
    norm: str = "linf"

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.norm not in ("linf", "l2"):
            raise UnsupportedConfigError(f"unsupported norm {self.norm!r}")
        if not 0 < self.gamma_min <= self.gamma0 < 1:
            raise ValueError("need 0 < gamma_min <= gamma0 < 1")
        if (self.optimizer.kind in (OptimizerKind.ADAM, OptimizerKind.ADAMAX)
                and self.scheduler.kind is not SchedulerKind.FIXED):
            raise UnsupportedConfigError("adam/adamax schedule themselves; use the fixed scheduler")

    @property
    def alpha0(self) -> float:
        return self.optimizer.lr


def baseline_config(steps: int = 200) -> AttackConfig:
    """The original FMN setting: GD + cosine annealing + logit loss, lr 1, no momentum."""
    return AttackConfig(LossKind.LL, OptimizerHypers(OptimizerKind.GD, lr=1.0, momentum=0.0),
                        SchedulerHypers(SchedulerKind.CALR), steps)


@dataclass
class AttackResult:
    best_delta: np.ndarray  # (n, d); zeros where the attack failed
    best_norm: np.ndarray  # (n,); +inf where the attack failed
    clean_correct: np.ndarray  # (n,) bool
    steps: int = 0
    trace: list | None = None  # rows (sample, k, norm, loss, eps, alpha)

    @property
    def success(self) -> np.ndarray:
        return np.isfinite(self.best_norm)

    def __len__(self):
        return len(self.best_norm)


# --------------------------------------------------------------------------
# building blocks


def project_gradient_linf(g):
    """Maximiser of ``v . g`` over the unit l-inf ball; ``sign(0) = 0``."""
    return np.sign(g)


def project_gradient_l2(g):
    g = np.asarray(g, dtype=np.float64)
    norm = _l2(g, keepdims=True)
    return np.divide(g, norm, out=np.zeros_like(g), where=norm > 0)


def _l2(v, keepdims=False):
    """Row-wise l2 norm, rescaled by the max entry so tiny vectors do not underflow."""
    v = np.asarray(v, dtype=np.float64)
    m = np.abs(v).max(axis=-1, keepdims=True) if v.shape[-1] else np.zeros(v.shape[:-1] + (1,))
    safe = np.where(m > 0, m, 1.0)
    out = m * np.sqrt(((v / safe) ** 2).sum(axis=-1, keepdims=True))
    return out if keepdims else out[..., 0]


def perturbation_norm(delta, norm: str = "linf"):
    delta = np.asarray(delta)
    if norm == "linf":
        return np.abs(delta).max(axis=-1) if delta.shape[-1] else np.zeros(delta.shape[:-1])
    return _l2(delta)


def gamma_schedule(gamma0: float, k: int, K: int, gamma_min: float = GAMMA_MIN) -> float:
    """Cosine decay of the epsilon-step size from ``gamma0`` (k=0) to ``gamma_min`` (k=K)."""
    if K < 1 or not 1 <= k <= K:
        raise ValueError(f"need 1 <= k <= K, got k={k}, K={K}")
    return gamma_min + (gamma0 - gamma_min) * (1 + math.cos(math.pi * k / K)) / 2


def eps_step(eps, gamma, is_adv, delta_norm, best_norm=np.inf):
    """Shrink the bound on adversarial iterates, grow it otherwise.

    While no adversarial point has been seen (``eps = inf``) the bound stays
    infinite; the first hit seeds it from the current norm.
    """
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    eps = np.asarray(eps, dtype=np.float64)
    shrunk = np.minimum(np.minimum(eps, best_norm), delta_norm) * (1 - gamma)
    grown = eps * (1 + gamma)  # inf stays inf
    out = np.where(is_adv, shrunk, grown)
    return float(out) if out.ndim == 0 else out


def _box_fix(x, delta):
    """Nudge ``delta`` toward zero until ``x + delta`` is exactly inside [0, 1]."""
    for _ in range(4):
        over = (x + delta) > 1.0
        under = (x + delta) < 0.0
        if not (over.any() or under.any()):
            break
        delta = np.where(over, np.nextafter(delta, -np.inf), delta)
        delta = np.where(under, np.nextafter(delta, np.inf), delta)
    return delta


def project_feasible(x, delta, eps, norm: str = "linf"):
    """Project onto the eps-ball, then clip ``x + delta`` into the unit box.

    Both steps only ever shrink ``|delta|`` component-wise, so the ball
    constraint survives the box clip exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    e = eps.reshape(eps.shape + (1,) * (delta.ndim - eps.ndim))
    if norm == "linf":
        delta = np.clip(delta, -e, e)
    else:
        n = _l2(delta, keepdims=True)
        scale = np.where(n > e, e / np.where(n > 0, n, 1.0), 1.0)
        # rounding can leave the rescaled norm a hair above eps; shave the scale
        for _ in range(8):
            over = _l2(delta * scale, keepdims=True) > e
            if not over.any():
                break
            scale = np.where(over, np.nextafter(scale, 0.0), scale)
        delta = delta * scale
    delta = np.clip(delta, -x, 1.0 - x)
    return _box_fix(x, delta)


# --------------------------------------------------------------------------
# the attack


def _run_chunk(model: Model, X, y, config: AttackConfig, trace: bool, offset: int):
    n, d = X.shape
    K = config.steps
    head = loss_head(config.loss, y, degenerate="zero")
    project = project_gradient_linf if config.norm == "linf" else project_gradient_l2

    delta = np.zeros_like(X)
    eps = np.full(n, np.inf)
    best_delta = np.zeros_like(X)
    best_norm = np.full(n, np.inf)
    optimizer = make_optimizer(config.optimizer, X.shape)
    schedule = StepSchedule(config.scheduler, config.alpha0, K, n)
    rows = [] if trace else None
    clean_correct = None

    def track(logits):
        nonlocal best_delta, best_norm
        adv = np.argmax(logits, axis=1) != y
        dn = perturbation_norm(delta, config.norm)
        better = adv & (dn < best_norm)
        best_norm = np.where(better, dn, best_norm)
        best_delta = np.where(better[:, None], delta, best_delta)
        return adv, dn

    for k in range(1, K + 1):
        gamma = gamma_schedule(config.gamma0, k, K, config.gamma_min)
        logits, losses, grad = value_and_input_gradient(model, X + delta, head)
        if clean_correct is None:
            clean_correct = np.argmax(logits, axis=1) == y
        adv, dn = track(logits)
        eps = eps_step(eps, gamma, adv, dn, best_norm)
        alpha = schedule.alphas(k - 1, losses)
        if rows is not None:
            rows.extend((offset + i, k - 1, dn[i], losses[i], eps[i], alpha[i]) for i in range(n))
        delta = optimizer.step(delta, project(grad), alpha)
        delta = project_feasible(X, delta, eps, config.norm)

    logits = forward(model, X + delta)
    _, dn = track(logits)
    if rows is not None:
        final = loss_value_and_grad(config.loss, logits, y, degenerate="zero")[0]
        rows.extend((offset + i, K, dn[i], final[i], eps[i], 0.0) for i in range(n))
    return best_delta, best_norm, clean_correct, rows


def fmn_run(model: Model, X, y, config: AttackConfig, *, trace: bool = False,
            threads: int = 1) -> AttackResult:
    """Run the attack on a batch; every sample evolves independently.

    ``threads > 1`` splits the batch into contiguous chunks; results are
    bitwise identical to the single-threaded run.
    """
    if not isinstance(config, AttackConfig):
        raise TypeError("config must be an AttackConfig")
    X, _ = _as_batch(model, X)
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (len(X),)).copy()
    if len(X) == 0:
        raise ValueError("empty batch")
    if config.loss is LossKind.DLR and model.num_classes < 3:
        raise UnsupportedConfigError("DLR needs at least 3 classes")
    if np.any(y < 0) or np.any(y >= model.num_classes):
        raise ValueError("labels out of range")

    threads = max(1, min(int(threads), len(X)))
    bounds = np.linspace(0, len(X), threads + 1).astype(int)
    chunks = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if len(chunks) == 1:
        parts = [_run_chunk(model, X, y, config, trace, 0)]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(lambda ab: _run_chunk(model, X[ab[0]:ab[1]], y[ab[0]:ab[1]],
                                                        config, trace, ab[0]), chunks))
    rows = None
    if trace:
        rows = sorted((r for p in parts for r in p[3]), key=lambda r: (r[0], r[1]))
    return AttackResult(
        best_delta=np.concatenate([p[0] for p in parts]),
        best_norm=np.concatenate([p[1] for p in parts]),
        clean_correct=np.concatenate([p[2] for p in parts]),
        steps=config.steps,
        trace=rows,
    )


def with_hypers(config: AttackConfig, optimizer: OptimizerHypers | None = None,
                scheduler: SchedulerHypers | None = None, **kw) -> AttackConfig:
    changes = dict(kw)
    if optimizer is not None:
        changes["optimizer"] = optimizer
    if scheduler is not None:
        changes["scheduler"] = scheduler
    return replace(config, **changes)
