from .gp import GaussianProcess, gp_fit, matern52
from .space import Choice, ConfigSpec, Fixed, Range, SearchSpace, configuration_set
from .tuner import (
    History,
    Observation,
    RankedConfig,
    expected_improvement,
    ho_fmn_run,
    median_norm,
    median_objective,
    nei_acquisition,
    nei_from_incumbents,
    propose_next,
    rank_configurations,
    sample_incumbents,
    sobol_init,
    sobol_points,
    tune,
)
