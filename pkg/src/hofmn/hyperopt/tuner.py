"""Bayesian hyperparameter search over one attack configuration at a time."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm, qmc

from ..attack import fmn_run
from ..errors import NotEnoughDataError
from ..model import Model
from ..seeding import derive_seed
from .gp import GaussianProcess, _cholesky_with_jitter, gp_fit
from .space import ConfigSpec, SearchSpace

log = logging.getLogger(__name__)


def sobol_points(dim: int, n: int, seed: int) -> np.ndarray:
    """First ``n`` points of a scrambled Sobol sequence in ``[0, 1]^dim``."""
    if n < 1:
        raise ValueError("need at least one point")
    m = max(0, math.ceil(math.log2(n)))
    engine = qmc.Sobol(d=dim, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return engine.random_base2(m)[:n]


def sobol_init(space: SearchSpace, P: int, seed: int) -> list[dict]:
    return [space.decode(u) for u in sobol_points(space.dim, P, seed)]


# --------------------------------------------------------------------------
# acquisition


def expected_improvement(mean, std, f_min):
    """Closed-form ``E[(f_min - f)^+]`` for ``f ~ N(mean, std^2)`` (minimisation)."""
    mean, std, f_min = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (mean, std, f_min)))
    gap = f_min - mean
    out = np.maximum(gap, 0.0)
    pos = std > 0
    z = np.divide(gap, std, out=np.zeros_like(gap), where=pos)
    out = np.where(pos, gap * norm.cdf(z) + std * norm.pdf(z), out)
    return np.maximum(out, 0.0)


def sample_incumbents(gp: GaussianProcess, mc_samples: int, seed: int) -> np.ndarray:
    """Minimum of joint latent posterior draws at the observed inputs."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    mean, cov = gp.posterior_joint(gp.X)
    L, _ = _cholesky_with_jitter(cov)
    z = np.random.default_rng(seed).standard_normal((mc_samples, len(mean)))
    return (mean[None, :] + z @ L.T).min(axis=1)


def nei_from_incumbents(mean, std, incumbents) -> np.ndarray:
    """Average closed-form EI of each candidate over the sampled incumbents."""
    mean = np.atleast_1d(mean)[:, None]
    std = np.atleast_1d(std)[:, None]
    return expected_improvement(mean, std, np.asarray(incumbents)[None, :]).mean(axis=1)


def nei_acquisition(gp: GaussianProcess, candidates, mc_samples: int = 128, seed: int = 0,
                    return_terms: bool = False):
    """Monte-Carlo noisy expected improvement for minimisation.

    With ``return_terms`` the per-draw EI matrix ``(n_candidates, mc_samples)``
    is returned as well, for standard-error estimates.
    """
    mean, std = gp.posterior(candidates)
    inc = sample_incumbents(gp, mc_samples, seed)
    terms = expected_improvement(mean[:, None], std[:, None], inc[None, :])
    value = terms.mean(axis=1)
    return (value, terms) if return_terms else value


def propose_next(gp: GaussianProcess, space: SearchSpace, n_candidates: int = 1024, seed: int = 0,
                 mc_samples: int = 128) -> tuple[dict, np.ndarray]:
    """Argmax of NEI over a fresh Sobol candidate set (lowest index wins ties)."""
    cand = sobol_points(space.dim, n_candidates, seed)
    acq = nei_acquisition(gp, cand, mc_samples, derive_seed(seed, "nei"))
    i = int(np.argmax(acq))
    params = space.decode(cand[i])
    return params, space.encode(params)


# --------------------------------------------------------------------------
# objective and history


def median_norm(norms) -> float:
    """Median of per-sample minimum norms; ``inf`` unless more than half are finite."""
    norms = np.asarray(norms, dtype=np.float64)
    if len(norms) == 0:
        raise ValueError("no norms")
    if 2 * np.isfinite(norms).sum() <= len(norms):
        return math.inf
    return float(np.median(norms))


def median_objective(model: Model, X, y, spec: ConfigSpec, params: dict, K: int = 200,
                     threads: int = 1) -> float:
    result = fmn_run(model, X, y, spec.attack_config(params, K), threads=threads)
    return median_norm(result.best_norm)


@dataclass
class Observation:
    trial: int
    params: dict
    point: np.ndarray
    median: float
    source: str = "sobol"
    wall_time_s: float | None = None


@dataclass
class History:
    config_id: str = ""
    observations: list[Observation] = field(default_factory=list)

    def __len__(self):
        return len(self.observations)

    @property
    def best(self) -> Observation | None:
        best = None
        for obs in self.observations:
            if math.isfinite(obs.median) and (best is None or obs.median < best.median):
                best = obs
        return best

    @property
    def best_median(self) -> float:
        b = self.best
        return b.median if b is not None else math.inf

    def incumbent_trajectory(self) -> list[float]:
        out, cur = [], math.inf
        for obs in self.observations:
            if obs.median < cur:
                cur = obs.median
            out.append(cur)
        return out

    def to_records(self) -> list[dict]:
        return [{"trial": o.trial, "config_id": self.config_id, "hyperparameters": o.params,
                 "median": o.median, "source": o.source, "wall_time_s": o.wall_time_s}
                for o in self.observations]

    @classmethod
    def from_records(cls, records, space: SearchSpace, config_id: str = "") -> "History":
        h = cls(config_id)
        for r in records:
            params = {k: r["hyperparameters"][k] for k in r["hyperparameters"]}
            med = r["median"]
            h.observations.append(Observation(int(r["trial"]), params, space.encode(params),
                                              math.inf if med is None else float(med),
                                              r.get("source", "sobol"), r.get("wall_time_s")))
        if [o.trial for o in h.observations] != list(range(len(h.observations))):
            raise ValueError("trial indices must be contiguous from 0")
        return h


def tune(objective: Callable[[dict], float], space: SearchSpace, T: int = 32, P: int = 8,
         seed: int = 0, history: History | None = None, *, n_candidates: int = 1024,
         mc_samples: int = 128, timing: bool = False, config_id: str = "") -> History:
    """Sobol warm-up for ``P`` trials, then GP + NEI proposals up to ``T`` trials.

    Trials that cannot fit a GP (fewer than two finite medians) fall back to
    the next Sobol point. Passing a partial ``history`` resumes from its length.
    """
    if P < 1 or T < P:
        raise ValueError(f"need T >= P >= 1, got T={T}, P={P}")
    history = history if history is not None else History(config_id)
    sobol = sobol_points(space.dim, T, derive_seed(seed, "sobol"))
    for j in range(len(history), T):
        t0 = time.perf_counter()
        source = "sobol"
        params = space.decode(sobol[j])
        if j >= P:
            finite = [o for o in history.observations if math.isfinite(o.median)]
            try:
                gp = gp_fit(np.array([o.point for o in finite]).reshape(len(finite), space.dim),
                            [o.median for o in finite], seed=derive_seed(seed, "gp", j))
                params, _ = propose_next(gp, space, n_candidates, derive_seed(seed, "acq", j), mc_samples)
                source = "gp"
            except NotEnoughDataError:
                log.info("trial %d: fewer than two finite medians, using Sobol point", j)
        value = float(objective(params))
        elapsed = time.perf_counter() - t0 if timing else None
        history.observations.append(Observation(j, params, space.encode(params), value, source, elapsed))
    if not math.isfinite(history.best_median):
        log.warning("all %d trials returned an infinite median", T)
    return history


def ho_fmn_run(model: Model, X, y, spec: ConfigSpec, T: int = 32, P: int = 8, seed: int = 0,
               K: int = 200, history: History | None = None, threads: int = 1, timing: bool = False,
               **kw):
    """Tune one configuration against ``model`` on the batch ``(X, y)``.

    Returns ``(best_params, best_median, history)``; ``best_params`` is None
    when every trial failed on at least half of the batch.
    """
    space = spec.space(K)
    h = tune(lambda p: median_objective(model, X, y, spec, p, K, threads), space, T, P, seed,
             history, timing=timing, config_id=spec.id, **kw)
    best = h.best
    return (best.params if best else None), h.best_median, h


@dataclass
class RankedConfig:
    spec: ConfigSpec
    params: dict | None
    median: float
    history: History


def rank_configurations(model: Model, X, y, specs, T: int = 32, P: int = 8, seed: int = 0,
                        K: int = 200, threads: int = 1, timing: bool = False, **kw) -> list[RankedConfig]:
    """Tune every configuration and sort by best median (declaration order breaks ties)."""
    specs = list(specs)
    if not specs:
        raise ValueError("no configurations to rank")
    ranked = []
    for spec in specs:
        params, med, h = ho_fmn_run(model, X, y, spec, T, P, derive_seed(seed, spec.id), K,
                                    threads=threads, timing=timing, **kw)
        log.info("%s: best median %.6g", spec.id, med)
        ranked.append(RankedConfig(spec, params, med, h))
    order = sorted(range(len(ranked)), key=lambda i: (ranked[i].median, i))
    return [ranked[i] for i in order]
