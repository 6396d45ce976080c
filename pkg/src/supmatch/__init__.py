"""Subgroup-invariant representation learning via adversarial support
matching over balanced bags, with semi-supervised clustering for bag
balancing, reference baselines, and theory-check harnesses."""

from .bagging import Bag, BagOrigin, BalancingScheme, sample_batch_of_bags, sample_deployment_bag, sample_train_bag
from .estimator import RankStatsClusterer, SupportMatchEstimator
from .hierarchy import SupportSpec, has_full_support, pi_set, sample_pi
from .metrics import MetricsReport, evaluate_predictions, hgr_discrete, robust_accuracy, tv_distance
from .training import LossBreakdown, ModelConfig, TrainConfig, train_instancewise_ablation, train_loop

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "BagOrigin",
    "BalancingScheme",
    "LossBreakdown",
    "MetricsReport",
    "ModelConfig",
    "RankStatsClusterer",
    "SupportMatchEstimator",
    "SupportSpec",
    "TrainConfig",
    "evaluate_predictions",
    "has_full_support",
    "hgr_discrete",
    "pi_set",
    "robust_accuracy",
    "sample_batch_of_bags",
    "sample_deployment_bag",
    "sample_pi",
    "sample_train_bag",
    "train_instancewise_ablation",
    "train_loop",
    "tv_distance",
]
