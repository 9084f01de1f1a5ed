"""Desk-scale experiment protocols shared by the scripts and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass

from .attack import baseline_config, fmn_run
from .hyperopt import configuration_set, median_norm, rank_configurations
from .model import accuracy, make_rings, train_adversarial
from .seeding import derive_seed


@dataclass
class EndToEndOutcome:
    seed: int
    clean_accuracy: float
    baseline_median: float
    top_config: str
    top_params: dict | None
    top_tuning_median: float
    top_heldout_median: float
    ranking: list  # (config id, tuning median) in rank order
    seconds: float

    @property
    def improved(self) -> bool:
        return self.top_heldout_median <= self.baseline_median


def end_to_end(seed: int, T: int = 32, P: int = 8, K: int = 200, batch: int = 128,
               heldout: int = 128, threads: int = 1, specs=None) -> EndToEndOutcome:
    """Tune all configurations against an adversarially trained rings MLP.

    The top-ranked configuration is then compared with the default attack
    on a disjoint held-out split of the same distribution.
    """
    t0 = time.perf_counter()
    train = make_rings(600, derive_seed(seed, "train"))
    model = train_adversarial(train, (2, 32, 32, 3), epochs=60, lr=0.3, eps_train=0.03, pgd_steps=5,
                              seed=derive_seed(seed, "model"))
    tune_set = make_rings(batch, derive_seed(seed, "tune"))
    held = make_rings(heldout, derive_seed(seed, "held"))

    base = median_norm(fmn_run(model, held.X, held.y, baseline_config(K), threads=threads).best_norm)
    ranked = rank_configurations(model, tune_set.X, tune_set.y, specs or configuration_set(), T=T, P=P,
                                 seed=seed, K=K, threads=threads)
    top = ranked[0]
    if top.params is None:
        top_med = float("inf")
    else:
        cfg = top.spec.attack_config(top.params, K)
        top_med = median_norm(fmn_run(model, held.X, held.y, cfg, threads=threads).best_norm)
    return EndToEndOutcome(seed, accuracy(model, held), base, top.spec.id, top.params, top.median, top_med,
                           [(r.spec.id, r.median) for r in ranked], time.perf_counter() - t0)


def summarize(outcomes) -> str:
    lines = ["seed  clean  baseline  top-1 config      tuning   held-out  ok"]
    for o in outcomes:
        lines.append(f"{o.seed:>4}  {o.clean_accuracy:.3f}  {o.baseline_median:.5f}   {o.top_config:<16}"
                     f"  {o.top_tuning_median:.5f}  {o.top_heldout_median:.5f}  {'yes' if o.improved else 'no'}")
    wins = sum(o.improved for o in outcomes)
    lines.append(f"top-1 <= baseline on {wins}/{len(outcomes)} seeds")
    return "\n".join(lines)

