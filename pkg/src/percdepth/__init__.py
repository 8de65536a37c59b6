"""Unsupervised single-image RGB-to-depth transfer.

Dual Wasserstein-1 critics with gradient penalty, cycle reconstruction
measured in critic feature space blended with hand-crafted image filters, and
a ResNet18-style generator pair.
"""

from .data import ScalingSpec, UnpairedPools, scale_to_model, synth_dataset, unscale
from .estimator import DepthEstimator
from .filters import FilterConfig, GrayWeights, psi
from .networks import NetScale, build_critic, build_generator, param_count
from .training import TrainConfig, Trainer, train

__version__ = "0.1.0"

__all__ = [
    "DepthEstimator",
    "FilterConfig",
    "GrayWeights",
    "NetScale",
    "ScalingSpec",
    "TrainConfig",
    "Trainer",
    "UnpairedPools",
    "build_critic",
    "build_generator",
    "param_count",
    "psi",
    "scale_to_model",
    "synth_dataset",
    "train",
    "unscale",
]
