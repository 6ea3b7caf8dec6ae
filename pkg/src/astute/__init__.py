"""Explainer astuteness for removal-based attribution methods.

Estimate how often explanations of nearby inputs stay close, predict a lower
bound from the predictor's probabilistic Lipschitzness, and compare the two.
"""

from .core import Dataset, PairSamplePlan, PairSet, RadiusTooSmallError, distance, median_pairwise_distance, sample_pairs
from .data import GeneratorSpec, generate, load_csv, save_csv
from .explain import (
    Attribution,
    AttributionBatch,
    RiseConfig,
    explain_batch,
    remove_individual,
    rise,
    shap_exact,
    shap_sampled,
)
from .predict import KernelModel, LinearModel, MlpModel, TrainConfig, known_lipschitz_upper, train
from .robustness import (
    BetaStarProblem,
    BoundSpec,
    RobustnessCurve,
    auc,
    auc_gap,
    beta_star,
    estimate_astuteness,
    estimate_plipschitz,
    predict_bound,
    verify_theorem,
)

__version__ = "0.1.0"
