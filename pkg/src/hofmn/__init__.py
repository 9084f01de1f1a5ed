"""Modular fast minimum-norm attacks with per-model Bayesian hyperparameter tuning."""

__version__ = "0.1.0"

from .attack import AttackConfig, AttackResult, baseline_config, fmn_run
from .evaluation import RobustnessCurve, binary_search_min_eps, curve_export, fixed_budget_attack
from .losses import LossKind, loss_value_and_grad
from .model import Dataset, Model, forward, load_model, save_model
from .steppers import OptimizerHypers, OptimizerKind, SchedulerHypers, SchedulerKind
