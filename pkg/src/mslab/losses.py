"""Pair-based losses over a similarity matrix.

Each loss returns its value and the analytic gradient ``dL/dS`` for every
ordered pair ``(i, j)``; row ``i`` holds the pairs anchored at sample ``i``.
Anchor-structured losses (lifted, binomial, lifted-star, MS and variants)
average over the ``m`` anchors.  Contrastive averages over the ``m(m-1)``
ordered pairs and triplet over the enumerable triplets.

The ``*_weights`` functions evaluate the closed-form pair weights directly,
one anchor at a time, and are kept separate from the vectorized gradient
code so one can check the other.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from mslab.core import HyperParams, pair_masks
from mslab.gpw import LossOutput, PairLoss


class NoValidTriplets(ValueError):
    pass


class AnchorWithoutPartners(ValueError):
    def __init__(self, anchor: int):
        super().__init__(f"no anchor has both positive and negative partners (first: {anchor})")
        self.anchor = anchor


class UnknownMethod(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unknown method {self.name!r}; choose from {', '.join(sorted(LOSSES))}"


@dataclass(frozen=True)
class MinedSets:
    """Selected pairs per anchor: ``pos[i, j]`` is True iff ``j`` is in P_i."""

    pos: np.ndarray
    neg: np.ndarray

    def positives(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.pos[i])

    def negatives(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.neg[i])

    @property
    def empty(self) -> bool:
        return not (self.pos.any() or self.neg.any())


def _masked_lse(X, mask):
    """Row-wise log-sum-exp over ``mask``; ``-inf`` for empty rows."""
    Xm = np.where(mask, X, -np.inf)
    top = Xm.max(axis=1)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        s = np.sum(np.where(mask, np.exp(Xm - top[:, None]), 0.0), axis=1)
        return np.log(s) + top


def _masked_softmax(X, mask):
    lse = _masked_lse(X, mask)
    lse = np.where(np.isfinite(lse), lse, 0.0)
    return np.where(mask, np.exp(np.where(mask, X, 0.0) - lse[:, None]), 0.0)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _as_inputs(S, y):
    S = np.asarray(S, dtype=np.float64)
    y = np.asarray(y)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] != y.shape[0]:
        raise ValueError(f"S of shape {S.shape} does not match {y.shape[0]} labels")
    return S, y


def binomial_counts(y):
    """Per-anchor numbers of positive and negative partners."""
    masks = pair_masks(y)
    return masks.pos.sum(axis=1), masks.neg.sum(axis=1)


# -- mining -----------------------------------------------------------------


def ms_mine(S, y, epsilon: float) -> MinedSets:
    """Select informative pairs by comparing each pair with the other kind.

    A negative is kept if it is more similar than the hardest positive
    minus ``epsilon``; a positive is kept if it is less similar than the
    hardest negative plus ``epsilon``.  Anchors missing either kind of
    partner select nothing.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    S, y = _as_inputs(S, y)
    masks = pair_masks(y)
    has_both = masks.pos.any(axis=1) & masks.neg.any(axis=1)
    min_pos = np.where(masks.pos, S, np.inf).min(axis=1)
    max_neg = np.where(masks.neg, S, -np.inf).max(axis=1)
    neg = masks.neg & (S > (min_pos - epsilon)[:, None]) & has_both[:, None]
    pos = masks.pos & (S < (max_neg + epsilon)[:, None]) & has_both[:, None]
    return MinedSets(pos=pos, neg=neg)


def all_pairs(S, y) -> MinedSets:
    masks = pair_masks(y)
    return MinedSets(pos=masks.pos, neg=masks.neg)


def _mining_kinks(S, y, hp: HyperParams) -> float:
    S, y = _as_inputs(S, y)
    masks = pair_masks(y)
    has_both = masks.pos.any(axis=1) & masks.neg.any(axis=1)
    if not has_both.any():
        return np.inf
    min_pos = np.where(masks.pos, S, np.inf).min(axis=1)
    max_neg = np.where(masks.neg, S, -np.inf).max(axis=1)
    rows = has_both[:, None]
    d_neg = np.abs(S - (min_pos - hp.epsilon)[:, None])[masks.neg & rows]
    d_pos = np.abs(S - (max_neg + hp.epsilon)[:, None])[masks.pos & rows]
    return float(np.concatenate([d_neg, d_pos]).min())


# -- contrastive and triplet ------------------------------------------------


def contrastive_loss(S, y, hp: HyperParams, reduction: str = "mean") -> LossOutput:
    """Pull every positive pair together, push negatives above ``margin`` apart."""
    S, y = _as_inputs(S, y)
    m = S.shape[0]
    masks = pair_masks(y)
    hinge = masks.neg & (S > hp.margin)
    value = np.sum(np.where(hinge, S - hp.margin, 0.0)) - np.sum(S[masks.pos])
    grad = hinge.astype(np.float64) - masks.pos
    scale = 1.0 / (m * (m - 1)) if reduction == "mean" else 1.0
    return LossOutput(value=float(value * scale), grad=grad * scale)


def _contrastive_kinks(S, y, hp):
    S, y = _as_inputs(S, y)
    neg = pair_masks(y).neg
    return float(np.abs(S[neg] - hp.margin).min()) if neg.any() else np.inf


def _triplet_gaps(S, y, margin):
    """Yield ``(anchor, positives, negatives, S_an - S_ap + margin)`` per anchor."""
    masks = pair_masks(y)
    for a in range(S.shape[0]):
        P = np.flatnonzero(masks.pos[a])
        N = np.flatnonzero(masks.neg[a])
        if P.size and N.size:
            yield a, P, N, S[a, N][None, :] - S[a, P][:, None] + margin


def triplet_loss(S, y, hp: HyperParams, reduction: str = "mean") -> LossOutput:
    """Hinge on every (anchor, positive, negative) triplet in the batch.

    A pair shared by several violating triplets accumulates one unit of
    gradient per triplet.
    """
    S, y = _as_inputs(S, y)
    grad = np.zeros_like(S)
    total, count = 0.0, 0
    for a, P, N, gap in _triplet_gaps(S, y, hp.margin):
        active = gap > 0
        total += gap[active].sum()
        count += gap.size
        grad[a, P] -= active.sum(axis=1)
        grad[a, N] += active.sum(axis=0)
    if count == 0:
        raise NoValidTriplets("batch has no (anchor, positive, negative) triplet")
    scale = 1.0 / count if reduction == "mean" else 1.0
    return LossOutput(value=float(total * scale), grad=grad * scale)


def _triplet_kinks(S, y, hp):
    S, y = _as_inputs(S, y)
    gaps = [np.abs(g).min() for _, _, _, g in _triplet_gaps(S, y, hp.margin)]
    return float(min(gaps)) if gaps else np.inf


# -- lifted structure -------------------------------------------------------


def _lifted_terms(S, y, margin):
    masks = pair_masks(y)
    valid = masks.pos.any(axis=1) & masks.neg.any(axis=1)
    lse_pos = _masked_lse(margin - S, masks.pos)
    lse_neg = _masked_lse(S, masks.neg)
    J = np.where(valid, lse_pos + lse_neg, 0.0)
    return masks, valid, J


def lifted_loss(S, y, hp: HyperParams) -> LossOutput:
    """Hinged log-sum-exp over each anchor's positives and negatives."""
    S, y = _as_inputs(S, y)
    m = S.shape[0]
    masks, valid, J = _lifted_terms(S, y, hp.margin)
    if not valid.any():
        raise AnchorWithoutPartners(0)
    active = valid & (J > 0)
    w_pos = _masked_softmax(hp.margin - S, masks.pos)
    w_neg = _masked_softmax(S, masks.neg)
    grad = np.where(active[:, None], w_neg - w_pos, 0.0) / m
    return LossOutput(value=float(J[active].sum() / m), grad=grad)


def _lifted_kinks(S, y, hp):
    S, y = _as_inputs(S, y)
    _, valid, J = _lifted_terms(S, y, hp.margin)
    return float(np.abs(J[valid]).min()) if valid.any() else np.inf


def lifted_weights(S, y, hp: HyperParams) -> np.ndarray:
    """Closed-form lifted weights, unscaled, zero for inactive anchors.

    ``w+_ij = 1 / sum_k exp(S_ij - S_ik)`` over positives k and
    ``w-_ij = 1 / sum_k exp(S_ik - S_ij)`` over negatives k.
    """
    S, y = _as_inputs(S, y)
    m = S.shape[0]
    W = np.zeros_like(S)
    for i in range(m):
        P = [k for k in range(m) if k != i and y[k] == y[i]]
        N = [k for k in range(m) if y[k] != y[i]]
        if not P or not N:
            continue
        J = np.log(sum(np.exp(hp.margin - S[i, k]) for k in P)) + np.log(
            sum(np.exp(S[i, k]) for k in N)
        )
        if J <= 0:
            continue
        for j in P:
            W[i, j] = 1.0 / sum(np.exp(S[i, j] - S[i, k]) for k in P)
        for j in N:
            W[i, j] = 1.0 / sum(np.exp(S[i, k] - S[i, j]) for k in N)
    return W


# -- binomial deviance and lifted-star --------------------------------------


def binomial_loss(S, y, hp: HyperParams, mined: MinedSets | None = None) -> LossOutput:
    """Softplus on every pair, averaged within each anchor's pos / neg group."""
    S, y = _as_inputs(S, y)
    m = S.shape[0]
    sets = mined if mined is not None else all_pairs(S, y)
    n_pos = np.maximum(sets.pos.sum(axis=1), 1)[:, None]
    n_neg = np.maximum(sets.neg.sum(axis=1), 1)[:, None]
    a_arg = hp.alpha * (hp.lam - S)
    b_arg = hp.beta * (S - hp.lam)
    value = np.sum(np.where(sets.pos, np.logaddexp(0.0, a_arg), 0.0) / n_pos)
    value += np.sum(np.where(sets.neg, np.logaddexp(0.0, b_arg), 0.0) / n_neg)
    grad = np.where(sets.neg, hp.beta * _sigmoid(b_arg) / n_neg, 0.0)
    grad -= np.where(sets.pos, hp.alpha * _sigmoid(a_arg) / n_pos, 0.0)
    return LossOutput(value=float(value / m), grad=grad / m, degenerate=sets.empty)


def binomial_weights(S, y, hp: HyperParams) -> np.ndarray:
    """Closed-form binomial weights, unscaled by the anchor count."""
    S, y = _as_inputs(S, y)
    P, N = binomial_counts(y)
    m = S.shape[0]
    W = np.zeros_like(S)
    a, b, lam = hp.alpha, hp.beta, hp.lam
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            if y[i] == y[j]:
                e = np.exp(a * (lam - S[i, j]))
                W[i, j] = a * e / (1 + e) / P[i]
            else:
                e = np.exp(b * (S[i, j] - lam))
                W[i, j] = b * e / (1 + e) / N[i]
    return W


def _grouped(S, y, mined):
    if mined is not None:
        return mined
    sets = all_pairs(S, y)
    both = (sets.pos.any(axis=1) & sets.neg.any(axis=1))[:, None]
    return MinedSets(pos=sets.pos & both, neg=sets.neg & both)


def lifted_star_loss(S, y, hp: HyperParams, mined: MinedSets | None = None) -> LossOutput:
    """Temperature-scaled log-sum-exp over each anchor's groups, no hinge."""
    S, y = _as_inputs(S, y)
    m = S.shape[0]
    sets = _grouped(S, y, mined)
    if mined is None and sets.empty:
        raise AnchorWithoutPartners(0)
    lse_pos = _masked_lse(-hp.alpha * S, sets.pos)
    lse_neg = _masked_lse(hp.beta * S, sets.neg)
    value = lse_pos[sets.pos.any(axis=1)].sum() / hp.alpha
    value += lse_neg[sets.neg.any(axis=1)].sum() / hp.beta
    grad = _masked_softmax(hp.beta * S, sets.neg) - _masked_softmax(-hp.alpha * S, sets.pos)
    return LossOutput(value=float(value / m), grad=grad / m, degenerate=sets.empty)


# -- multi-similarity -------------------------------------------------------


def ms_weights(S, mined: MinedSets, hp: HyperParams) -> np.ndarray:
    """Closed-form MS weights of the mined pairs, unscaled.

    The sums over each mined group include the pair itself.
    """
    S = np.asarray(S, dtype=np.float64)
    W = np.zeros_like(S)
    a, b, lam = hp.alpha, hp.beta, hp.lam
    for i in range(S.shape[0]):
        N = mined.negatives(i)
        P = mined.positives(i)
        for j in N:
            W[i, j] = 1.0 / (np.exp(b * (lam - S[i, j])) + np.exp(b * (S[i, N] - S[i, j])).sum())
        for j in P:
            W[i, j] = 1.0 / (np.exp(-a * (lam - S[i, j])) + np.exp(-a * (S[i, P] - S[i, j])).sum())
    return W


def ms_loss(S, y, hp: HyperParams, mined: MinedSets | None = None) -> LossOutput:
    """Multi-similarity loss: mine with ``epsilon``, then soft-weight.

    ``mined`` overrides the selection, which is how the selection is held
    fixed while differentiating.  An all-empty selection gives zero loss
    and gradient with ``degenerate=True``.
    """
    S, y = _as_inputs(S, y)
    m = S.shape[0]
    sets = mined if mined is not None else ms_mine(S, y, hp.epsilon)
    if sets.empty:
        return LossOutput(value=0.0, grad=np.zeros_like(S), degenerate=True)
    x_pos = -hp.alpha * (S - hp.lam)
    x_neg = hp.beta * (S - hp.lam)
    log_pos = np.logaddexp(0.0, _masked_lse(x_pos, sets.pos))
    log_neg = np.logaddexp(0.0, _masked_lse(x_neg, sets.neg))
    value = (log_pos.sum() / hp.alpha + log_neg.sum() / hp.beta) / m
    w_pos = np.where(sets.pos, np.exp(np.where(sets.pos, x_pos, 0.0) - log_pos[:, None]), 0.0)
    w_neg = np.where(sets.neg, np.exp(np.where(sets.neg, x_neg, 0.0) - log_neg[:, None]), 0.0)
    return LossOutput(value=float(value), grad=(w_neg - w_pos) / m)


def ms_weighting_loss(S, y, hp: HyperParams) -> LossOutput:
    """MS weighting applied to every pair, without the mining step."""
    return ms_loss(S, y, hp, mined=all_pairs(S, y))


def ms_mining_only_loss(S, y, hp: HyperParams, mined: MinedSets | None = None) -> LossOutput:
    """Mined pairs with equal unit weight.

    The value is the linear functional ``mean_i(sum_{N_i} S - sum_{P_i} S)``
    whose gradient is exactly those unit weights.
    """
    S, y = _as_inputs(S, y)
    m = S.shape[0]
    sets = mined if mined is not None else ms_mine(S, y, hp.epsilon)
    grad = (sets.neg.astype(np.float64) - sets.pos) / m
    return LossOutput(value=float(np.sum(grad * S)), grad=grad, degenerate=sets.empty)


def binlifted_grad(S, y, hp: HyperParams) -> np.ndarray:
    """Average of the binomial and lifted-star pair weights, signed."""
    return (binomial_loss(S, y, hp).grad + lifted_star_loss(S, y, hp).grad) / 2


def _binlifted(S, y, hp: HyperParams) -> LossOutput:
    return LossOutput(value=float("nan"), grad=binlifted_grad(S, y, hp))


def _miner(S, y, hp: HyperParams) -> MinedSets:
    return ms_mine(S, y, hp.epsilon)


def _with_mining(fn, S, y, hp, mined=None):
    return fn(S, y, hp, mined=mined if mined is not None else ms_mine(S, y, hp.epsilon))


LOSSES: dict[str, PairLoss] = {
    loss.name: loss
    for loss in [
        PairLoss("contrastive", contrastive_loss, kinks=_contrastive_kinks),
        PairLoss("triplet", triplet_loss, kinks=_triplet_kinks),
        PairLoss("lifted", lifted_loss, kinks=_lifted_kinks),
        PairLoss("binomial", binomial_loss),
        PairLoss("lifted_star", lifted_star_loss),
        PairLoss("binlifted", _binlifted, has_value=False),
        PairLoss("ms", ms_loss, kinks=_mining_kinks, miner=_miner),
        PairLoss("ms_mining", ms_mining_only_loss, kinks=_mining_kinks, miner=_miner),
        PairLoss("ms_weighting", ms_weighting_loss),
        PairLoss(
            "binomial_m", partial(_with_mining, binomial_loss), kinks=_mining_kinks, miner=_miner
        ),
        PairLoss(
            "lifted_star_m",
            partial(_with_mining, lifted_star_loss),
            kinks=_mining_kinks,
            miner=_miner,
        ),
    ]
}

# which similarity types each method uses when weighting (S: self,
# P: relative to positives, N: relative to other negatives)
SIMILARITY_TYPES = {
    "contrastive": "S",
    "triplet": "P",
    "lifted": "N",
    "binomial": "S",
    "lifted_star": "N",
    "binlifted": "SN",
    "ms": "SNP",
    "ms_mining": "P",
    "ms_weighting": "SN",
    "binomial_m": "SP",
    "lifted_star_m": "NP",
}


def get_loss(name: str) -> PairLoss:
    try:
        return LOSSES[name]
    except KeyError:
        raise UnknownMethod(name) from None
