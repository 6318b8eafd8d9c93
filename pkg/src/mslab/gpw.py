"""General pair weighting: uniform loss interface and gradient tooling.

Every loss is a function of the similarity matrix ``S`` and the labels
``y``.  Its gradient with respect to ``S`` is what the model actually sees,
so the magnitude of each entry is the weight the loss places on that
ordered pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from mslab.core import HyperParams, pair_masks

SIGN_TOL = 1e-9


class SignViolation(ArithmeticError):
    """A positive pair is pushed apart or a negative pair pulled together."""

    def __init__(self, i: int, j: int, value: float):
        super().__init__(f"gradient at ({i}, {j}) has the wrong sign: {value:.3e}")
        self.i, self.j, self.value = i, j, value


@dataclass
class LossOutput:
    value: float
    grad: np.ndarray
    # set when no anchor produced a usable pair (value and grad are zero)
    degenerate: bool = False


@dataclass(frozen=True)
class PairLoss:
    """A pair-based loss ``L(S, y)`` with its analytic gradient.

    ``fn`` returns a :class:`LossOutput`.  Losses that select pairs before
    weighting expose their selector as ``miner``; the selection is then
    passed back through ``fn(..., mined=...)`` so it can be held fixed.
    ``kinks`` returns the distance from ``S`` to the nearest point where
    the loss is not differentiable (``inf`` for smooth losses).
    """

    name: str
    fn: Callable[..., LossOutput]
    kinks: Optional[Callable[..., float]] = None
    miner: Optional[Callable[..., object]] = None
    has_value: bool = True
    mined: object = field(default=None, compare=False, repr=False)

    def __call__(self, S, y, hp: HyperParams) -> LossOutput:
        if self.miner is not None and self.mined is not None:
            return self.fn(S, y, hp, mined=self.mined)
        return self.fn(S, y, hp)

    def value(self, S, y, hp: HyperParams) -> float:
        if not self.has_value:
            raise TypeError(f"{self.name} is defined by its gradient only")
        return self(S, y, hp).value

    def grad(self, S, y, hp: HyperParams) -> np.ndarray:
        return self(S, y, hp).grad

    def kink_distance(self, S, y, hp: HyperParams) -> float:
        if self.kinks is None:
            return np.inf
        return self.kinks(S, y, hp)

    def freeze(self, S, y, hp: HyperParams) -> "PairLoss":
        """Return a copy whose pair selection is fixed at ``S``."""
        if self.miner is None:
            return self
        return PairLoss(
            name=self.name,
            fn=self.fn,
            kinks=None,
            miner=self.miner,
            has_value=self.has_value,
            mined=self.miner(S, y, hp),
        )


def weights_from_gradient(loss: PairLoss, S, y, hp: HyperParams) -> np.ndarray:
    """Pair weights ``|dL/dS_ij|`` after checking the sign convention.

    Positive-pair entries must be <= 0 and negative-pair entries >= 0,
    otherwise :class:`SignViolation` is raised.
    """
    G = loss.grad(S, y, hp)
    check_signs(G, y)
    return np.abs(G)


def check_signs(G: np.ndarray, y, tol: float = SIGN_TOL) -> None:
    masks = pair_masks(y)
    bad = (masks.pos & (G > tol)) | (masks.neg & (G < -tol))
    if bad.any():
        i, j = (int(v) for v in np.argwhere(bad)[0])
        raise SignViolation(i, j, float(G[i, j]))


def fd_gradient(
    loss: PairLoss,
    S,
    y,
    hp: HyperParams,
    h: float = 1e-6,
    symmetric: bool = True,
) -> np.ndarray:
    """Central-difference estimate of ``dL/dS``.

    With ``symmetric=True`` the entries ``S_ij`` and ``S_ji`` move together
    and the difference is halved, which estimates ``(G_ij + G_ji) / 2`` for
    the analytic ordered-pair gradient ``G``.  With ``symmetric=False`` only
    ``S_ij`` moves, which estimates ``G_ij`` itself.  Diagonal entries are
    never read by a loss and are returned as zero.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-6, 1e-3]")
    S = np.array(S, dtype=np.float64)
    m = S.shape[0]
    out = np.zeros_like(S)
    f = lambda M: loss.value(M, y, hp)  # noqa: E731
    for i in range(m):
        for j in range(m):
            if i == j or (symmetric and j < i):
                continue
            Sp, Sm = S.copy(), S.copy()
            Sp[i, j] += h
            Sm[i, j] -= h
            if symmetric:
                Sp[j, i] += h
                Sm[j, i] -= h
            d = (f(Sp) - f(Sm)) / (2 * h)
            if symmetric:
                out[i, j] = out[j, i] = d / 2
            else:
                out[i, j] = d
    return out


def symmetrize(G: np.ndarray) -> np.ndarray:
    return (G + G.T) / 2


def surrogate_F(S, y, frozen_grad: np.ndarray) -> float:
    """``sum_ij G_ij * S_ij`` with ``G`` held constant.

    Its gradient with respect to ``S`` is ``frozen_grad`` itself, so
    training on it moves the model exactly as the original loss would.
    ``y`` is accepted for interface symmetry with the losses.
    """
    return float(np.sum(np.asarray(frozen_grad) * np.asarray(S)))


def relative_error(analytic, numeric, rtol: float, atol: float) -> float:
    """Largest ``|a - b| / max(|b|, atol / rtol)`` over all entries.

    A value <= ``rtol`` means every entry agrees to ``rtol`` relative
    accuracy, or to ``atol`` absolute accuracy when the entry is tiny.
    """
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(b), atol / rtol)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0
