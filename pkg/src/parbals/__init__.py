"""Bayesian active learning with partial-batch label sampling for linear probes."""

from ._kernels import BACKEND
from .acquisition import (
    Scores, bald_scores, batchbald_joint_mi, batchbald_select, confidence_scores,
    epig_scores, pairwise_mi, pairwise_mi_matrix, select_stochastic, select_top_b,
)
from .bait import bait_greedy, bait_objective, bait_state
from .bayes_linear import (
    ConvergenceError, PosteriorEnsemble, Prior, WeightPoint, laplace_posterior, map_fit, predict,
)
from .dataset import (
    DataError, LabelOracle, Scenario, SyntheticSpec, generate_synthetic, load_csv, load_scenario,
    preprocess, save_scenario, scenario_from_csv,
)
from .harness import (
    ConfigError, ExperimentConfig, LearningCurve, evaluate, run_experiment, run_suite,
)
from .partial_batch import ParbalsConfig, exact_parbals_objective, parbals_select

__version__ = "0.1.0"
