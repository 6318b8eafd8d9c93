"""Linear embedding learner trained with Adam on a pair-based loss."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from mslab.core import NORM_EPS, HyperParams, ZeroNormRow
from mslab.evaluation import Dataset, recall_at_k
from mslab.gpw import PairLoss, surrogate_F
from mslab.losses import get_loss


class InsufficientClassPopulation(ValueError):
    pass


@dataclass(frozen=True)
class BatchSpec:
    classes_per_batch: int = 4
    instances_per_class: int = 5

    def __post_init__(self):
        if self.classes_per_batch < 2 or self.instances_per_class < 2:
            raise ValueError("need at least 2 classes and 2 instances per class in a batch")

    @property
    def size(self) -> int:
        return self.classes_per_batch * self.instances_per_class


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, W, **hyper) -> "AdamState":
        return cls(m=np.zeros_like(W), v=np.zeros_like(W), **hyper)


@dataclass(frozen=True)
class TrainConfig:
    method: str = "ms"
    hp: HyperParams = field(default_factory=HyperParams)
    batch: BatchSpec = field(default_factory=BatchSpec)
    embed_dim: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epochs: int = 200
    # None: one pass worth of batches over the train split
    batches_per_epoch: Optional[int] = None
    seed: int = 0


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    recall_at_1: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    degenerate_batches: int = 0

    def __len__(self):
        return len(self.loss)


@dataclass
class ForwardCache:
    Z: np.ndarray
    norms: np.ndarray
    E: np.ndarray


def batch_sample(y, spec: BatchSpec, rng) -> np.ndarray:
    """Pick ``C_b`` classes uniformly, then ``M`` distinct samples of each.

    Only classes with at least ``M`` samples are eligible.
    """
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    eligible = classes[counts >= spec.instances_per_class]
    if len(eligible) < spec.classes_per_batch:
        raise InsufficientClassPopulation(
            f"{len(eligible)} classes have >= {spec.instances_per_class} samples, "
            f"need {spec.classes_per_batch}"
        )
    chosen = rng.choice(eligible, size=spec.classes_per_batch, replace=False)
    picks = [
        rng.choice(np.flatnonzero(y == c), size=spec.instances_per_class, replace=False)
        for c in chosen
    ]
    return np.concatenate(picks)


def init_params(d: int, l: int, rng) -> np.ndarray:
    if l < 2:
        raise ValueError("embedding dimension must be >= 2")
    return rng.uniform(-1.0, 1.0, size=(l, d)) / np.sqrt(d)


def forward(W, X):
    """Project ``X`` with ``W`` and normalize each row onto the sphere."""
    Z = np.asarray(X, dtype=np.float64) @ np.asarray(W, dtype=np.float64).T
    norms = np.linalg.norm(Z, axis=1)
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise ZeroNormRow(int(bad[0]))
    E = Z / norms[:, None]
    return E, ForwardCache(Z=Z, norms=norms, E=E)


def backward(grad_S, cache: ForwardCache, X) -> np.ndarray:
    """Chain ``dL/dS`` through ``S = E E^T``, the row normalization and ``W``."""
    E = cache.E
    grad_S = np.asarray(grad_S, dtype=np.float64)
    grad_E = (grad_S + grad_S.T) @ E
    radial = np.sum(grad_E * E, axis=1, keepdims=True)
    grad_Z = (grad_E - radial * E) / cache.norms[:, None]
    return grad_Z.T @ np.asarray(X, dtype=np.float64)


def adam_step(state: AdamState, W, grad_W):
    """One bias-corrected Adam update; returns new ``(state, W)``."""
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad_W
    v = state.beta2 * state.v + (1 - state.beta2) * grad_W * grad_W
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    W = W - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m=m, v=v, t=t, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_state, W


def loss_and_grad(loss: PairLoss, W, X, y, hp: HyperParams):
    """Loss value, ``dL/dW`` and the raw loss output for one batch.

    Gradient-only methods report the surrogate value ``sum G * S``.
    """
    E, cache = forward(W, X)
    S = E @ E.T
    out = loss(S, y, hp)
    value = out.value if loss.has_value else surrogate_F(S, y, out.grad)
    return value, backward(out.grad, cache, X), out


def embed(W, X) -> np.ndarray:
    return forward(W, X)[0]


def train(
    config: TrainConfig,
    dataset: Dataset,
    evaluate: Optional[Callable[[np.ndarray], float]] = None,
):
    """Run the seeded training loop; returns ``(W, history)``.

    ``evaluate(W)`` gives the per-epoch score recorded as Recall@1; by
    default it is Recall@1 on the test split (or on all samples when the
    dataset has no split).
    """
    loss = get_loss(config.method)
    rng = np.random.default_rng(config.seed)
    train_idx = dataset.train if dataset.train is not None else np.arange(len(dataset.y))
    X, y = dataset.X[train_idx], dataset.y[train_idx]
    if evaluate is None:
        held = dataset.test if dataset.test is not None else np.arange(len(dataset.y))
        Xh, yh = dataset.X[held], dataset.y[held]
        evaluate = lambda W: recall_at_k(embed(W, Xh), yh, ks=(1,))[1]  # noqa: E731

    W = init_params(X.shape[1], config.embed_dim, rng)
    state = AdamState.zeros_like(
        W, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps_adam
    )
    steps = config.batches_per_epoch or max(1, len(y) // config.batch.size)
    history = TrainHistory()
    for _ in range(config.epochs):
        start = time.perf_counter()
        losses = []
        for _ in range(steps):
            idx = batch_sample(y, config.batch, rng)
            value, grad_W, out = loss_and_grad(loss, W, X[idx], y[idx], config.hp)
            losses.append(value)
            if out.degenerate:
                history.degenerate_batches += 1
                continue
            state, W = adam_step(state, W, grad_W)
        history.loss.append(float(np.mean(losses)))
        history.recall_at_1.append(float(evaluate(W)))
        history.wall_time.append(time.perf_counter() - start)
    return W, history


def initial_params(config: TrainConfig, d: int) -> np.ndarray:
    """The ``W`` that :func:`train` starts from for this config."""
    return init_params(d, config.embed_dim, np.random.default_rng(config.seed))
