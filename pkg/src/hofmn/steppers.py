"""Optimizers and step-size schedulers acting on a batch of perturbations.

All state is per sample (first axis), so a batch of ``n`` behaves exactly like
``n`` independent runs. Weight decay is coupled: it is added to the update
direction as ``lambda * delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class OptimizerKind(str, Enum):
    GD = "gd"
    ADAM = "adam"
    ADAMAX = "adamax"


class SchedulerKind(str, Enum):
    CALR = "calr"
    RLROP = "rlrop"
    FIXED = "fixed"


RLROP_PATIENCE_CHOICES = (2, 5, 10)


def _check_range(name, value, low, high):
    if not (low <= value <= high):
        raise ValueError(f"{name}={value} outside [{low}, {high}]")


@dataclass(frozen=True)
class OptimizerHypers:
    kind: OptimizerKind = OptimizerKind.GD
    lr: float = 1.0
    weight_decay: float = 0.0
    momentum: float = 0.0  # gd only
    dampening: float = 0.0  # gd only
    beta1: float = 0.9  # adam/adamax only
    beta2: float = 0.999  # adam/adamax only
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        # 0 is allowed so the original FMN (no decay) stays expressible
        _check_range("weight_decay", self.weight_decay, 0.0, 1.0)
        if self.kind is OptimizerKind.GD:
            _check_range("momentum", self.momentum, 0.0, 0.9)
            _check_range("dampening", self.dampening, 0.0, 0.2)
        else:
            _check_range("beta1", self.beta1, 0.0, 0.999)
            _check_range("beta2", self.beta2, 0.0, 0.999)

    def to_dict(self) -> dict:
        keys = ["lr", "weight_decay"]
        keys += ["momentum", "dampening"] if self.kind is OptimizerKind.GD else ["beta1", "beta2", "eps"]
        return {k: getattr(self, k) for k in keys}


@dataclass(frozen=True)
class SchedulerHypers:
    kind: SchedulerKind = SchedulerKind.CALR
    factor: float = 0.1  # rlrop only
    patience: int = 10  # rlrop only
    threshold: float = 1e-4
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "kind", SchedulerKind(self.kind))
        if self.kind is SchedulerKind.RLROP:
            _check_range("factor", self.factor, 0.1, 0.5)
            if self.patience not in RLROP_PATIENCE_CHOICES:
                raise ValueError(f"patience must be one of {RLROP_PATIENCE_CHOICES}, got {self.patience}")
            object.__setattr__(self, "patience", int(self.patience))

    def to_dict(self) -> dict:
        if self.kind is SchedulerKind.RLROP:
            return {"factor": self.factor, "patience": self.patience}
        return {}


# --------------------------------------------------------------------------
# optimizers


def _per_sample(alpha, n) -> np.ndarray:
    a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (n,))
    if np.any(a < 0):
        raise ValueError("step sizes must be non-negative")
    return a


def _expand(v, ndim):
    return v.reshape(v.shape + (1,) * (ndim - 1))


class GD:
    """SGD with momentum and dampening: ``b <- mu b + (1 - tau) d``, ``delta <- delta - alpha b``.

    As in the usual deep-learning convention the first step seeds the buffer
    with ``d`` itself.
    """

    def __init__(self, hypers: OptimizerHypers, shape):
        self.h = hypers
        self.buf = np.zeros(shape)
        self.started = np.zeros(shape[0], dtype=bool)

    def step(self, delta, direction, alpha):
        a = _expand(_per_sample(alpha, delta.shape[0]), delta.ndim)
        d = direction + self.h.weight_decay * delta
        if self.h.momentum == 0.0:
            self.buf = d
        else:
            fresh = _expand(~self.started, delta.ndim)
            self.buf = np.where(fresh, d, self.h.momentum * self.buf + (1.0 - self.h.dampening) * d)
        self.started[:] = True
        return delta - a * self.buf


class Adam:
    def __init__(self, hypers: OptimizerHypers, shape):
        self.h = hypers
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = np.zeros(shape[0], dtype=np.int64)

    def step(self, delta, direction, alpha):
        a = _expand(_per_sample(alpha, delta.shape[0]), delta.ndim)
        d = direction + self.h.weight_decay * delta
        b1, b2 = self.h.beta1, self.h.beta2
        self.t += 1
        t = _expand(self.t, delta.ndim)
        self.m = b1 * self.m + (1 - b1) * d
        self.v = b2 * self.v + (1 - b2) * d * d
        m_hat = self.m / (1 - b1**t)
        v_hat = self.v / (1 - b2**t)
        return delta - a * m_hat / (np.sqrt(v_hat) + self.h.eps)


class AdaMax:
    """Adam with the second moment replaced by an exponentially weighted infinity norm."""

    def __init__(self, hypers: OptimizerHypers, shape):
        self.h = hypers
        self.m = np.zeros(shape)
        self.u = np.zeros(shape)
        self.t = np.zeros(shape[0], dtype=np.int64)

    def step(self, delta, direction, alpha):
        a = _expand(_per_sample(alpha, delta.shape[0]), delta.ndim)
        d = direction + self.h.weight_decay * delta
        b1, b2 = self.h.beta1, self.h.beta2
        self.t += 1
        t = _expand(self.t, delta.ndim)
        self.m = b1 * self.m + (1 - b1) * d
        self.u = np.maximum(b2 * self.u, np.abs(d) + self.h.eps)
        return delta - (a / (1 - b1**t)) * self.m / self.u


def make_optimizer(hypers: OptimizerHypers, shape):
    return {OptimizerKind.GD: GD, OptimizerKind.ADAM: Adam, OptimizerKind.ADAMAX: AdaMax}[hypers.kind](
        hypers, shape)


# --------------------------------------------------------------------------
# schedulers


def calr_alpha(alpha0: float, k: int, K: int) -> float:
    """Cosine annealing to zero: ``alpha0 * (1 + cos(pi k / K)) / 2``."""
    if K < 1 or not 0 <= k <= K:
        raise ValueError(f"need 0 <= k <= K and K >= 1, got k={k}, K={K}")
    return alpha0 * (1 + math.cos(math.pi * k / K)) / 2


def fixed_alpha(alpha0: float, k: int = 0, K: int = 1) -> float:
    return alpha0


class SamplewiseRLRoP:
    """Reduce-on-plateau with one step-size weight per sample.

    Sample ``i`` counts as improving when its loss drops below
    ``best_i * (1 - threshold)``. After more than ``patience`` consecutive
    non-improving updates its weight is multiplied by ``factor`` (skipped if the
    resulting change in step size would be below ``eps``).
    """

    def __init__(self, hypers: SchedulerHypers, n: int, alpha0: float):
        self.h = hypers
        self.alpha0 = alpha0
        self.w = np.ones(n)
        self.best = np.full(n, np.inf)
        self.stall = np.zeros(n, dtype=np.int64)

    def update(self, losses) -> np.ndarray:
        losses = np.asarray(losses, dtype=np.float64)
        if losses.shape != self.w.shape:
            raise ValueError(f"expected {self.w.shape[0]} losses, got {losses.shape}")
        improved = losses < self.best * (1.0 - self.h.threshold)
        self.best = np.where(improved, losses, self.best)
        self.stall = np.where(improved, 0, self.stall + 1)
        reduce = self.stall > self.h.patience
        new_w = self.w * self.h.factor
        apply = reduce & ((self.w - new_w) * self.alpha0 > self.h.eps)
        self.w = np.where(apply, new_w, self.w)
        self.stall = np.where(reduce, 0, self.stall)
        return self.w * self.alpha0


class StepSchedule:
    """Uniform per-iteration interface over the three schedulers.

    ``alphas(k, losses)`` returns the per-sample step sizes for 0-based
    iteration ``k`` of ``K``.
    """

    def __init__(self, hypers: SchedulerHypers, alpha0: float, K: int, n: int):
        self.h = hypers
        self.alpha0 = alpha0
        self.K = K
        self.n = n
        self.rlrop = SamplewiseRLRoP(hypers, n, alpha0) if hypers.kind is SchedulerKind.RLROP else None

    def alphas(self, k: int, losses) -> np.ndarray:
        if self.rlrop is not None:
            return self.rlrop.update(losses)
        if self.h.kind is SchedulerKind.CALR:
            return np.full(self.n, calr_alpha(self.alpha0, k, self.K))
        return np.full(self.n, fixed_alpha(self.alpha0, k, self.K))


def hypers_to_dict(opt: OptimizerHypers, sched: SchedulerHypers) -> dict:
    return {**opt.to_dict(), **sched.to_dict()}


def scheduler_fixed_values(kind: SchedulerKind, K: int) -> dict:
    """Non-searchable settings of each scheduler, for provenance records."""
    kind = SchedulerKind(kind)
    if kind is SchedulerKind.CALR:
        return {"T_max": K, "eta_min": 0.0, "last_epoch": -1}
    if kind is SchedulerKind.RLROP:
        return {"threshold": 1e-4, "eps": 1e-8}
    return {}

