"""Score backends: the exact Gaussian-mixture oracle and the trainable network."""

from .analytic import (
    AnalyticScore,
    GaussianMixtureData,
    analytic_score,
    analytic_vjp,
    responsibilities,
)
from .net import ConvScoreNet, NetConfig, load_checkpoint, net_score, net_vjp, parameter_count, save_checkpoint
from .toy import TOY_DATASETS, make_toy
from .train import Trainer, oracle_score_mse, train_step

__all__ = [
    "AnalyticScore",
    "ConvScoreNet",
    "GaussianMixtureData",
    "NetConfig",
    "TOY_DATASETS",
    "Trainer",
    "analytic_score",
    "analytic_vjp",
    "load_checkpoint",
    "make_toy",
    "net_score",
    "net_vjp",
    "oracle_score_mse",
    "parameter_count",
    "responsibilities",
    "save_checkpoint",
    "train_step",
]
