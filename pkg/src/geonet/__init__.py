"""Operator networks for Wasserstein geodesics plus an independent OT stack."""

from .autodiff import Tensor, no_grad
from .data import DensityGrid, GaussianMixture2D, MeshSpec, MixtureRanges, discretize
from .losses import LossReport, LossWeights
from .nets import Jet, MLPParams, mlp_forward, mlp_jet
from .operator import OperatorParams, Residuals, eval_C, eval_H, eval_geodesic_grid, residuals_at
from .otref import (
    Coupling,
    DiscreteMeasure,
    Gaussian2D,
    bures_geodesic,
    displacement_interpolate,
    lp_transport,
    sinkhorn,
    w2_gaussian,
    w2_grid_estimate,
)
from .trainer import TrainConfig, TrainResult, resume, train

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "DensityGrid",
    "GaussianMixture2D",
    "MeshSpec",
    "MixtureRanges",
    "discretize",
    "LossReport",
    "LossWeights",
    "Jet",
    "MLPParams",
    "mlp_forward",
    "mlp_jet",
    "OperatorParams",
    "Residuals",
    "eval_C",
    "eval_H",
    "eval_geodesic_grid",
    "residuals_at",
    "Coupling",
    "DiscreteMeasure",
    "Gaussian2D",
    "bures_geodesic",
    "displacement_interpolate",
    "lp_transport",
    "sinkhorn",
    "w2_gaussian",
    "w2_grid_estimate",
    "TrainConfig",
    "TrainResult",
    "resume",
    "train",
    "__version__",
]
