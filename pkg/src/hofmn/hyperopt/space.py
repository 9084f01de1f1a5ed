"""Search spaces and the attack configuration set."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..attack import AttackConfig
from ..losses import LossKind
from ..steppers import (
    RLROP_PATIENCE_CHOICES,
    OptimizerHypers,
    OptimizerKind,
    SchedulerHypers,
    SchedulerKind,
)

LR_RANGE = (8 / 255, 10.0)


@dataclass(frozen=True)
class Range:
    name: str
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"{self.name}: need low < high")
        if self.log and not self.low > 0:
            raise ValueError(f"{self.name}: logarithmic range needs low > 0")

    def encode(self, value) -> float:
        if self.log:
            u = (math.log(value) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        else:
            u = (value - self.low) / (self.high - self.low)
        return min(max(u, 0.0), 1.0)

    def decode(self, u) -> float:
        u = min(max(float(u), 0.0), 1.0)
        if self.log:
            v = math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))
        else:
            v = self.low + u * (self.high - self.low)
        return min(max(v, self.low), self.high)

    def contains(self, value) -> bool:
        return self.low <= value <= self.high


@dataclass(frozen=True)
class Choice:
    """Ordinal choice: values sit evenly on [0, 1] and decode by rounding."""

    name: str
    values: tuple

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError(f"{self.name}: empty choice set")
        object.__setattr__(self, "values", tuple(self.values))

    def encode(self, value) -> float:
        i = self.values.index(value)
        return i / (len(self.values) - 1) if len(self.values) > 1 else 0.0

    def decode(self, u):
        u = min(max(float(u), 0.0), 1.0)
        return self.values[int(round(u * (len(self.values) - 1)))]

    def contains(self, value) -> bool:
        return value in self.values


@dataclass(frozen=True)
class Fixed:
    name: str
    value: object


class SearchSpace:
    def __init__(self, params):
        self.params = tuple(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        self.free = tuple(p for p in self.params if not isinstance(p, Fixed))

    @property
    def dim(self) -> int:
        return len(self.free)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.free]

    def encode(self, values: dict) -> np.ndarray:
        return np.array([p.encode(values[p.name]) for p in self.free], dtype=np.float64)

    def decode(self, u) -> dict:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.dim,):
            raise ValueError(f"expected a point of dimension {self.dim}, got {u.shape}")
        out = {p.name: p.value for p in self.params if isinstance(p, Fixed)}
        out.update({p.name: p.decode(v) for p, v in zip(self.free, u)})
        return {p.name: out[p.name] for p in self.params}

    def contains(self, values: dict) -> bool:
        for p in self.params:
            if isinstance(p, Fixed):
                if values.get(p.name) != p.value:
                    return False
            elif p.name not in values or not p.contains(values[p.name]):
                return False
        return True

    def __repr__(self):
        return f"SearchSpace({[p.name for p in self.params]})"


def optimizer_space(kind: OptimizerKind) -> list:
    kind = OptimizerKind(kind)
    lr = Range("lr", *LR_RANGE, log=True)
    if kind is OptimizerKind.GD:
        return [lr, Range("momentum", 0.0, 0.9), Range("weight_decay", 0.01, 1.0),
                Range("dampening", 0.0, 0.2)]
    return [lr, Range("weight_decay", 0.01, 1.0), Fixed("eps", 1e-8),
            Range("beta1", 0.0, 0.999), Range("beta2", 0.0, 0.999)]


def scheduler_space(kind: SchedulerKind, K: int) -> list:
    kind = SchedulerKind(kind)
    if kind is SchedulerKind.CALR:
        return [Fixed("T_max", K), Fixed("eta_min", 0.0), Fixed("last_epoch", -1)]
    if kind is SchedulerKind.RLROP:
        return [Range("factor", 0.1, 0.5), Choice("patience", RLROP_PATIENCE_CHOICES),
                Fixed("threshold", 1e-4), Fixed("rlrop_eps", 1e-8)]
    return []


@dataclass(frozen=True)
class ConfigSpec:
    """One (loss, optimizer, scheduler) tuple."""

    loss: LossKind
    optimizer: OptimizerKind
    scheduler: SchedulerKind

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        object.__setattr__(self, "scheduler", SchedulerKind(self.scheduler))

    @property
    def id(self) -> str:
        return f"{self.loss.value}-{self.optimizer.value}-{self.scheduler.value}"

    @classmethod
    def from_id(cls, config_id: str) -> "ConfigSpec":
        try:
            loss, opt, sched = config_id.split("-")
            return cls(loss, opt, sched)
        except ValueError as exc:
            raise ValueError(f"bad configuration id {config_id!r}; expected loss-optimizer-scheduler") from exc

    def space(self, K: int = 200) -> SearchSpace:
        return SearchSpace(optimizer_space(self.optimizer) + scheduler_space(self.scheduler, K))

    def attack_config(self, values: dict, K: int = 200) -> AttackConfig:
        opt_keys = {"lr", "weight_decay", "momentum", "dampening", "beta1", "beta2", "eps"}
        opt = OptimizerHypers(self.optimizer, **{k: v for k, v in values.items() if k in opt_keys})
        sched_kw = {}
        if self.scheduler is SchedulerKind.RLROP:
            sched_kw = {"factor": values["factor"], "patience": int(values["patience"]),
                        "threshold": values.get("threshold", 1e-4), "eps": values.get("rlrop_eps", 1e-8)}
        return AttackConfig(self.loss, opt, SchedulerHypers(self.scheduler, **sched_kw), steps=K)


OPTIMIZER_SCHEDULER_PAIRS = (
    (OptimizerKind.GD, SchedulerKind.CALR),
    (OptimizerKind.GD, SchedulerKind.RLROP),
    (OptimizerKind.ADAM, SchedulerKind.FIXED),
    (OptimizerKind.ADAMAX, SchedulerKind.FIXED),
)


def configuration_set() -> list[ConfigSpec]:
    """The 12 admissible configurations, in declaration order.

    Adam and AdaMax adapt their own step sizes, so they are only paired with
    the fixed scheduler.
    """
    return [ConfigSpec(loss, opt, sched) for loss in LossKind for opt, sched in OPTIMIZER_SCHEDULER_PAIRS]
