"""Embedding-space primitives shared by every loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_EPS = 1e-12


class ZeroNormRow(ValueError):
    """A row cannot be projected onto the unit sphere."""

    def __init__(self, row: int):
        super().__init__(f"row {row} has norm <= {NORM_EPS:g}")
        self.row = row


@dataclass(frozen=True)
class HyperParams:
    """Loss hyperparameters.

    ``lam`` is the similarity offset of the binomial / MS family and
    ``margin`` is the hinge threshold of contrastive, triplet and lifted.
    """

    alpha: float = 2.0
    beta: float = 50.0
    lam: float = 1.0
    epsilon: float = 0.1
    margin: float = 0.5

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class PairMasks:
    pos: np.ndarray
    neg: np.ndarray


def l2_normalize(F: np.ndarray) -> np.ndarray:
    """Scale every row of ``F`` to unit L2 norm."""
    F = np.asarray(F, dtype=np.float64)
    norms = np.linalg.norm(F, axis=1)
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise ZeroNormRow(int(bad[0]))
    return F / norms[:, None]


def similarity_matrix(E: np.ndarray) -> np.ndarray:
    E = np.asarray(E, dtype=np.float64)
    return E @ E.T


def pair_masks(y) -> PairMasks:
    """Positive (same label, i != j) and negative (different label) masks."""
    y = np.asarray(y)
    same = y[:, None] == y[None, :]
    pos = same.copy()
    np.fill_diagonal(pos, False)
    return PairMasks(pos=pos, neg=~same)
