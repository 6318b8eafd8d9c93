"""Pair-weighting laboratory for deep metric learning losses."""

from mslab.core import (
    HyperParams,
    PairMasks,
    ZeroNormRow,
    l2_normalize,
    pair_masks,
    similarity_matrix,
)
from mslab.gpw import PairLoss, LossOutput, fd_gradient, surrogate_F, weights_from_gradient
from mslab.losses import LOSSES, get_loss

__all__ = [
    "HyperParams",
    "PairMasks",
    "ZeroNormRow",
    "l2_normalize",
    "pair_masks",
    "similarity_matrix",
    "PairLoss",
    "LossOutput",
    "fd_gradient",
    "surrogate_F",
    "weights_from_gradient",
    "LOSSES",
    "get_loss",
]

__version__ = "0.1.0"
