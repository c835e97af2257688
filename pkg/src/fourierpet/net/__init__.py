"""Unrolled amplitude/phase-aware reconstruction network."""

from .estimator import FourierPETReconstructor
from .model import (
    FourierPETNet,
    ForwardTrace,
    ReconConfig,
    composite_loss,
    dam_u_update,
    fourierpet_forward,
    initial_estimate,
    load_model,
    save_model,
)
from .modules import APCM, APCM_MODES, SCM, DiagonalSSD, diagonal_ssd_scan
from .trainer import TrainConfig, TrainHistory, normalize_truth, train

__all__ = [
    "APCM",
    "APCM_MODES",
    "SCM",
    "DiagonalSSD",
    "diagonal_ssd_scan",
    "FourierPETNet",
    "FourierPETReconstructor",
    "ForwardTrace",
    "ReconConfig",
    "TrainConfig",
    "TrainHistory",
    "composite_loss",
    "dam_u_update",
    "fourierpet_forward",
    "initial_estimate",
    "load_model",
    "normalize_truth",
    "save_model",
    "train",
]
