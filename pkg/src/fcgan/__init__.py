"""fcgan: GAN training and evaluation toolkit built around a
feature-cycling generator block with gated feature fusion."""

__version__ = "0.1.0"

from .blocks import (
    FeatureCyclingBlock,
    FeatureFusionModule,
    FusionKind,
    ResidualBlock,
    param_count,
)
from .config import RunConfig
from .losses import LossKind, Objective, d_loss, g_loss, lazy_schedule
from .metrics import FeatureSet, MetricReport, fid, precision_recall
from .networks import Discriminator, Generator, NetworkSpec, build_networks, count_parameters

__all__ = [
    "FeatureCyclingBlock",
    "FeatureFusionModule",
    "FusionKind",
    "ResidualBlock",
    "param_count",
    "RunConfig",
    "LossKind",
    "Objective",
    "d_loss",
    "g_loss",
    "lazy_schedule",
    "FeatureSet",
    "MetricReport",
    "fid",
    "precision_recall",
    "Discriminator",
    "Generator",
    "NetworkSpec",
    "build_networks",
    "count_parameters",
    "__version__",
]
