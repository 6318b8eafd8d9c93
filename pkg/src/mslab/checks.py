"""Finite-difference verification harness shared by tests and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from mslab.core import HyperParams, l2_normalize, similarity_matrix
from mslab.gpw import LossOutput, PairLoss, fd_gradient, relative_error, symmetrize
from mslab.trainer import loss_and_grad

LOSS_RTOL = 1e-5
E2E_RTOL = 1e-4
ATOL = 1e-8


def random_labels(rng, m: int) -> np.ndarray:
    """Labels with at least two classes and at least one repeated class."""
    while True:
        classes = int(rng.integers(2, max(2, m // 2) + 1))
        y = rng.integers(0, classes, size=m)
        counts = np.bincount(y)
        if (counts > 0).sum() >= 2 and counts.max() >= 2:
            return y


def random_similarity(rng, m_max: int = 12, l_max: int = 4):
    """Cosine similarities of random low-dimensional unit vectors.

    Low dimension spreads the similarities over most of [-1, 1].
    """
    m = int(rng.integers(4, m_max + 1))
    l = int(rng.integers(2, l_max + 1))
    E = l2_normalize(rng.standard_normal((m, l)))
    return similarity_matrix(E), random_labels(rng, m)


def random_hyperparams(rng) -> HyperParams:
    return HyperParams(
        alpha=float(rng.uniform(1.0, 4.0)),
        beta=float(rng.uniform(5.0, 50.0)),
        lam=float(rng.uniform(0.2, 0.9)),
        epsilon=float(rng.uniform(0.0, 0.3)),
        margin=float(rng.uniform(0.1, 0.6)),
    )


def safe_instance(loss: PairLoss, hp: HyperParams, rng, clearance: float, m_max: int = 12):
    """Resample until every kink of ``loss`` is farther than ``clearance``."""
    while True:
        S, y = random_similarity(rng, m_max=m_max)
        if loss.kink_distance(S, y, hp) > clearance:
            return S, y


def corrupted(loss: PairLoss, factor: float = 1.01) -> PairLoss:
    """Same loss with its analytic gradient scaled; for harness self-tests."""

    def fn(S, y, hp, **kw):
        out = loss.fn(S, y, hp, **kw)
        return LossOutput(out.value, out.grad * factor, out.degenerate)

    return replace(loss, fn=fn)


@dataclass
class CheckResult:
    method: str
    max_error: float
    instances: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def loss_level_check(loss: PairLoss, rng, n: int, hp=None, h: float = 1e-6) -> CheckResult:
    """Analytic ``dL/dS`` against central differences on ``n`` instances.

    Both the symmetric oracle (against the symmetrized analytic gradient)
    and the single-entry oracle (against the ordered-pair gradient) are
    compared.  ``hp=None`` draws random hyperparameters per instance.
    """
    worst = 0.0
    for _ in range(n):
        params = hp if hp is not None else random_hyperparams(rng)
        S, y = safe_instance(loss, params, rng, clearance=10 * h)
        G = loss.grad(S, y, params)
        sym = fd_gradient(loss, S, y, params, h=h, symmetric=True)
        one = fd_gradient(loss, S, y, params, h=h, symmetric=False)
        worst = max(
            worst,
            relative_error(symmetrize(G), sym, LOSS_RTOL, ATOL),
            relative_error(G, one, LOSS_RTOL, ATOL),
        )
    return CheckResult(loss.name, worst, n, LOSS_RTOL)


def fd_param_gradient(loss: PairLoss, W, X, y, hp, h: float = 1e-6) -> np.ndarray:
    W = np.array(W, dtype=np.float64)
    out = np.zeros_like(W)
    for idx in np.ndindex(*W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        out[idx] = (
            loss_and_grad(loss, Wp, X, y, hp)[0] - loss_and_grad(loss, Wm, X, y, hp)[0]
        ) / (2 * h)
    return out


def end_to_end_check(
    loss: PairLoss, rng, n: int, hp=None, h: float = 1e-6, m_max: int = 10, d_max: int = 6, l_max: int = 4
) -> CheckResult:
    """``dL/dW`` from the trainer's backward pass against differences over ``W``.

    Pair selection is frozen at the unperturbed ``W``; instances whose
    similarities sit within 1e-3 of a kink are resampled.
    """
    worst = 0.0
    done = 0
    while done < n:
        params = hp if hp is not None else random_hyperparams(rng)
        m = int(rng.integers(4, m_max + 1))
        d = int(rng.integers(2, d_max + 1))
        l = int(rng.integers(2, l_max + 1))
        X = rng.standard_normal((m, d))
        W = rng.standard_normal((l, d))
        y = random_labels(rng, m)
        Z = X @ W.T
        if np.linalg.norm(Z, axis=1).min() < 1e-2:
            continue
        S = similarity_matrix(l2_normalize(Z))
        if loss.kink_distance(S, y, params) <= 1e-3:
            continue
        frozen = loss.freeze(S, y, params)
        _, grad_W, _ = loss_and_grad(frozen, W, X, y, params)
        numeric = fd_param_gradient(frozen, W, X, y, params, h=h)
        worst = max(worst, relative_error(grad_W, numeric, E2E_RTOL, ATOL))
        done += 1
    return CheckResult(loss.name, worst, n, E2E_RTOL)
