"""Robustness curves, robust accuracy, and the fixed-budget comparison harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attack import AttackResult, perturbation_norm, project_feasible, project_gradient_linf
from .hyperopt.tuner import median_norm
from .losses import LossKind, loss_head
from .model import Model, _as_batch, forward, value_and_input_gradient
from .steppers import OptimizerHypers, SchedulerHypers, StepSchedule, make_optimizer


@dataclass(frozen=True)
class RobustnessCurve:
    """Per-sample minimum norms, sorted ascending with failures (+inf) last."""

    norms: np.ndarray
    success: np.ndarray

    def __post_init__(self):
        norms = np.asarray(self.norms, dtype=np.float64)
        success = np.asarray(self.success, dtype=bool) & np.isfinite(norms)
        order = np.argsort(np.where(success, norms, np.inf), kind="stable")
        object.__setattr__(self, "norms", np.where(success, norms, np.inf)[order])
        object.__setattr__(self, "success", success[order])

    @classmethod
    def from_result(cls, result: AttackResult) -> "RobustnessCurve":
        return cls(result.best_norm, result.success)

    @property
    def size(self) -> int:
        return len(self.norms)

    def attack_success_rate(self, eps: float) -> float:
        """Fraction of samples broken with norm strictly below ``eps``."""
        if eps < 0:
            raise ValueError("eps must be non-negative")
        if self.size == 0:
            return 0.0
        return int(np.searchsorted(self.norms, eps, side="left")) / self.size

    def robust_accuracy(self, eps: float) -> float:
        return 1.0 - self.attack_success_rate(eps)

    def breakpoints(self) -> np.ndarray:
        return np.unique(self.norms[self.success])


def attack_success_rate(curve: RobustnessCurve, eps: float) -> float:
    return curve.attack_success_rate(eps)


def robust_accuracy(curve: RobustnessCurve, eps: float) -> float:
    return curve.robust_accuracy(eps)


def curve_export(curve: RobustnessCurve, grid=()) -> list[tuple[float, float]]:
    """Rows ``(eps, RA)`` for the grid plus one row per distinct broken norm.

    Grid rows hold ``RA(eps)`` exactly. A breakpoint row at norm ``b`` holds
    the value just after the drop, ``lim RA(e)`` as ``e -> b+``. With that
    convention ``RA(e)`` equals the value of the last row with ``eps < e``
    (or 1 when there is none), which :func:`curve_query` implements. Rows are
    sorted by eps; at a shared eps the grid row comes first.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    rows = [(float(e), curve.robust_accuracy(float(e)), 0) for e in grid]
    for b in curve.breakpoints():
        after = 1.0 - np.searchsorted(curve.norms, b, side="right") / curve.size
        rows.append((float(b), float(after), 1))
    rows.sort(key=lambda r: (r[0], r[2]))
    return [(e, ra) for e, ra, _ in rows]


def curve_query(rows, eps: float) -> float:
    """Robust accuracy at ``eps`` reconstructed from exported rows."""
    value = 1.0
    for e, ra in rows:
        if e < eps:
            value = ra
        else:
            break
    return value


def write_curve_csv(rows, path, header_lines=()) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("epsilon,robust_accuracy\n")
        for e, ra in rows:
            fh.write(f"{e!r},{ra!r}\n")


def read_curve_csv(path) -> list[tuple[float, float]]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if lines[0] != "epsilon,robust_accuracy":
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    return [tuple(float(v) for v in ln.split(",")) for ln in lines[1:]]


# --------------------------------------------------------------------------
# fixed-budget subject and bisection


@dataclass(frozen=True)
class FixedBudgetConfig:
    """PGD-style attack with an l-inf budget.

    The scheduler output is a fraction of the budget: at iteration ``k`` each
    coordinate moves by at most ``alpha_k * eps``.
    """

    epsilon: float = 8 / 255
    steps: int = 50
    loss: LossKind = LossKind.LL
    optimizer: OptimizerHypers = field(default_factory=lambda: OptimizerHypers(lr=0.5))
    scheduler: SchedulerHypers = field(default_factory=SchedulerHypers)

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass
class FixedBudgetResult:
    success: np.ndarray
    delta: np.ndarray  # first adversarial iterate (zeros where none)
    steps: int


def fixed_budget_attack(model: Model, X, y, config: FixedBudgetConfig, epsilon=None) -> FixedBudgetResult:
    """Success iff any iterate (including the clean point) is misclassified.

    ``epsilon`` overrides ``config.epsilon`` and may be one value per sample.
    """
    X, single = _as_batch(model, X)
    n = len(X)
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,)).copy()
    eps = np.broadcast_to(np.asarray(config.epsilon if epsilon is None else epsilon, dtype=np.float64),
                          (n,)).copy()
    if np.any(eps < 0):
        raise ValueError("epsilon must be non-negative")
    head = loss_head(config.loss, y, degenerate="zero")
    optimizer = make_optimizer(config.optimizer, X.shape)
    schedule = StepSchedule(config.scheduler, config.optimizer.lr, config.steps, n)
    delta = np.zeros_like(X)
    success = np.zeros(n, dtype=bool)
    found = np.zeros_like(X)

    def record(logits):
        nonlocal success, found
        adv = (np.argmax(logits, axis=1) != y) & ~success
        found = np.where(adv[:, None], delta, found)
        success = success | adv

    for k in range(config.steps):
        logits, losses, grad = value_and_input_gradient(model, X + delta, head)
        record(logits)
        alpha = schedule.alphas(k, losses) * eps
        delta = optimizer.step(delta, project_gradient_linf(grad), alpha)
        delta = project_feasible(X, delta, eps)
    record(forward(model, X + delta))
    if single:
        return FixedBudgetResult(success[:1], found[:1], config.steps)
    return FixedBudgetResult(success, found, config.steps)


@dataclass
class BisectionResult:
    lo: np.ndarray
    hi: np.ndarray
    found: np.ndarray  # False: no success even at the upper end of the range
    probes: list  # per step: (eps vector, success vector)
    checked_high: np.ndarray  # samples that needed an extra probe at the upper end
    eps_low: float
    eps_high: float
    attack_steps: int = 0


def binary_search_min_eps(success_fn, eps_low: float = 0.0, eps_high: float = 32 / 255,
                          steps: int = 5, n: int | None = None) -> BisectionResult:
    """Per-sample bisection on a monotone success predicate.

    ``success_fn(eps)`` answers for every sample at once: with ``n`` given it
    takes and returns length-``n`` vectors, otherwise scalars. Each step
    probes the midpoint ``lo + (hi - lo) / 2``; success moves ``hi`` down,
    failure moves ``lo`` up, so the bracket width halves exactly per step.
    Samples that never succeed get one extra probe at ``eps_high``; failing
    there flags them not found.
    """
    if not eps_low < eps_high:
        raise ValueError("need eps_low < eps_high")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    size = 1 if n is None else n

    def ask(eps):
        out = success_fn(eps if n is not None else float(eps[0]))
        return np.broadcast_to(np.asarray(out, dtype=bool), (size,)).copy()

    lo = np.full(size, float(eps_low))
    hi = np.full(size, float(eps_high))
    found = np.zeros(size, dtype=bool)
    probes = []
    for _ in range(steps):
        mid = lo + (hi - lo) / 2
        ok = ask(mid)
        probes.append((mid, ok))
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
        found |= ok
    checked = ~found
    if checked.any():
        found |= checked & ask(np.full(size, float(eps_high)))
    return BisectionResult(lo, hi, found, probes, checked, float(eps_low), float(eps_high))


def bisect_fixed_budget(model: Model, X, y, config: FixedBudgetConfig, eps_low: float = 0.0,
                        eps_high: float = 32 / 255, steps: int = 5) -> BisectionResult:
    """Bisection of :func:`fixed_budget_attack`, run for the whole batch per step."""
    X, _ = _as_batch(model, X)
    res = binary_search_min_eps(lambda eps: fixed_budget_attack(model, X, y, config, eps).success,
                                eps_low, eps_high, steps, n=len(X))
    res.attack_steps = (steps + int(res.checked_high.any())) * config.steps
    return res


# --------------------------------------------------------------------------
# comparison report


@dataclass
class ReportRow:
    method: str
    total_time_s: float | None
    median_norm: float
    attack_steps: int


def compare_report(fmn_norms, bisection: BisectionResult, fixed_budget_steps: int,
                   fmn_steps: int, wall_times=None, labels=("fmn", "bisection")) -> list[ReportRow]:
    """One row for the single minimum-norm run, one per bisection iteration.

    Bisection row ``i`` reports the median over samples of the upper bracket
    after ``i`` steps (``inf`` for samples never found) and the cumulative
    number of attack steps spent so far. ``wall_times`` is
    ``(fmn_seconds, [cumulative seconds after each step])``; without it the
    time column is left empty.
    """
    fmn_norms = np.asarray(fmn_norms, dtype=np.float64)
    if len(fmn_norms) == 0 or not bisection.probes:
        raise ValueError("empty result set")
    if len(bisection.found) != len(fmn_norms):
        raise ValueError("minimum-norm and bisection results cover different sample sets")
    fmn_time, step_times = (None, [None] * len(bisection.probes)) if wall_times is None else wall_times
    rows = [ReportRow(labels[0], fmn_time, median_norm(fmn_norms), fmn_steps)]
    # samples found only by the final check are bracketed by eps_high throughout
    hi = np.where(bisection.found, bisection.eps_high, np.inf)
    for i, (eps, ok) in enumerate(bisection.probes, start=1):
        hi = np.where(ok, eps, hi)
        cost = i * fixed_budget_steps
        if i == len(bisection.probes) and bisection.checked_high.any():
            cost += fixed_budget_steps  # upper-end confirmation probe
        rows.append(ReportRow(f"{labels[1]}-{i}", step_times[i - 1], median_norm(hi), cost))
    return rows


def write_report_csv(rows, path, header_lines=()) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("method,total_time_s,median_norm,attack_steps\n")
        for r in rows:
            t = "" if r.total_time_s is None else f"{r.total_time_s:.6f}"
            fh.write(f"{r.method},{t},{r.median_norm!r},{r.attack_steps}\n")


def clean_accuracy(result: AttackResult) -> float:
    return float(np.mean(result.clean_correct))


def replay_check(model: Model, X, y, result: AttackResult, norm: str = "linf") -> np.ndarray:
    """Per-sample soundness of an attack result, re-evaluated from scratch."""
    X, _ = _as_batch(model, X)
    y = np.asarray(y)
    ok = np.ones(len(X), dtype=bool)
    s = result.success
    if s.any():
        adv = X[s] + result.best_delta[s]
        in_box = np.all((adv >= 0.0) & (adv <= 1.0), axis=1)
        mis = np.argmax(forward(model, adv), axis=1) != y[s]
        same_norm = perturbation_norm(result.best_delta[s], norm) == result.best_norm[s]
        ok[s] = in_box & mis & same_norm
    return ok


# --------------------------------------------------------------------------
# per-sample result files


def save_result(result: AttackResult, path, header_lines=(), with_delta: bool = True) -> None:
    """CSV with one row per sample; floats use ``repr`` so a reload is exact."""
    d = result.best_delta.shape[1] if with_delta else 0
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(["index", "success", "best_norm", "clean_correct"]
                          + [f"delta_{j}" for j in range(d)]) + "\n")
        for i in range(len(result)):
            cells = [str(i), str(int(result.success[i])), repr(float(result.best_norm[i])),
                     str(int(result.clean_correct[i]))]
            cells += [repr(float(v)) for v in result.best_delta[i]] if with_delta else []
            fh.write(",".join(cells) + "\n")


def load_result(path) -> AttackResult:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    header = lines[0].split(",")
    if header[:4] != ["index", "success", "best_norm", "clean_correct"]:
        raise ValueError(f"{path}: not a result file")
    rows = [ln.split(",") for ln in lines[1:]]
    d = len(header) - 4
    norms = np.array([float(r[2]) for r in rows], dtype=np.float64)
    clean = np.array([r[3] == "1" for r in rows], dtype=bool)
    delta = np.array([[float(v) for v in r[4:]] for r in rows], dtype=np.float64).reshape(len(rows), d)
    return AttackResult(delta, norms, clean)


def read_header(path) -> list[str]:
    """Leading ``# `` comment lines of an output file, without the marker."""
    out = []
    with open(path) as fh:
        for ln in fh:
            if not ln.startswith("#"):
                break
            out.append(ln[1:].strip())
    return out
