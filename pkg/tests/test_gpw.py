import numpy as np
import pytest

from mslab.checks import corrupted, loss_level_check, random_similarity
from mslab.core import HyperParams
from mslab.gpw import (
    LossOutput,
    PairLoss,
    SignViolation,
    fd_gradient,
    relative_error,
    surrogate_F,
    symmetrize,
    weights_from_gradient,
)
from mslab.losses import LOSSES, get_loss

HP = HyperParams()


def two_by_two(s, same):
    S = np.array([[1.0, s], [s, 1.0]])
    y = np.array([0, 0]) if same else np.array([0, 1])
    return S, y


class TestWeightsFromGradient:
    def test_contrastive_positive_weight_is_one(self):
        # summed (unaveraged) contrastive: d(-S)/dS = -1 for each ordered pair
        from mslab.losses import contrastive_loss

        S, y = two_by_two(0.3, same=True)
        loss = PairLoss("sum", lambda S, y, hp: contrastive_loss(S, y, hp, reduction="sum"))
        np.testing.assert_array_equal(weights_from_gradient(loss, S, y, HP), [[0, 1], [1, 0]])

    def test_contrastive_inactive_negative(self):
        S, y = two_by_two(0.3, same=False)
        assert not weights_from_gradient(get_loss("contrastive"), S, y, HP).any()

    def test_binomial_negative_midpoint(self):
        S, y = two_by_two(HP.lam, same=False)
        W = weights_from_gradient(get_loss("binomial"), S, y, HP)
        # one negative per anchor, two anchors averaged
        assert W[0, 1] * 2 == pytest.approx(25.0, abs=1e-12)

    def test_sign_violation_detected(self):
        def pull_negatives(S, y, hp):
            return LossOutput(0.0, -np.ones_like(S) + np.eye(len(y)))

        S, y = two_by_two(0.2, same=False)
        with pytest.raises(SignViolation):
            weights_from_gradient(PairLoss("bad", pull_negatives), S, y, HP)

    @pytest.mark.parametrize("name", sorted(LOSSES))
    def test_sign_convention_all_losses(self, name, rng):
        loss = get_loss(name)
        for _ in range(20):
            S, y = random_similarity(rng)
            W = weights_from_gradient(loss, S, y, HP)
            assert (W >= 0).all()
            np.testing.assert_array_equal(np.diag(W), 0.0)


class TestFdGradient:
    def test_diagonal_is_zero(self, rng):
        S, y = random_similarity(rng)
        G = fd_gradient(get_loss("ms_weighting"), S, y, HP)
        np.testing.assert_array_equal(np.diag(G), 0.0)

    def test_contrastive_positive(self):
        from mslab.losses import contrastive_loss

        S, y = two_by_two(0.8, same=True)
        loss = PairLoss("sum", lambda S, y, hp: contrastive_loss(S, y, hp, reduction="sum"))
        assert fd_gradient(loss, S, y, HP)[0, 1] == pytest.approx(-1.0, abs=1e-6)

    def test_step_range_enforced(self, rng):
        S, y = random_similarity(rng)
        with pytest.raises(ValueError):
            fd_gradient(get_loss("binomial"), S, y, HP, h=1e-2)

    def test_symmetric_oracle_estimates_symmetrized_gradient(self, rng):
        # lifted gradients are not symmetric: anchors differ in hinge state
        loss = get_loss("binomial")
        S, y = random_similarity(rng)
        G = loss.grad(S, y, HP)
        sym = fd_gradient(loss, S, y, HP, symmetric=True)
        assert relative_error(symmetrize(G), sym, 1e-5, 1e-8) <= 1e-5

    def test_ms_matches_oracle(self, rng):
        result = loss_level_check(get_loss("ms"), rng, n=5)
        assert result.passed

    def test_corrupted_gradient_is_caught(self, rng):
        result = loss_level_check(corrupted(get_loss("binomial"), 1.01), rng, n=3)
        assert not result.passed


class TestSurrogate:
    def test_zero_grad(self, rng):
        S, y = random_similarity(rng)
        assert surrogate_F(S, y, np.zeros_like(S)) == 0.0

    def test_single_entry(self):
        S = np.array([[1.0, 0.4], [0.4, 1.0]])
        G = np.zeros((2, 2))
        G[0, 1] = -3.0
        assert surrogate_F(S, [0, 0], G) == pytest.approx(-1.2)

    def test_contrastive_three_samples(self):
        # positive pair (0,1) at 0.8; negatives (0,2) at 0.7 active, (1,2) at 0.1 inactive
        S = np.array([[1.0, 0.8, 0.7], [0.8, 1.0, 0.1], [0.7, 0.1, 1.0]])
        y = [0, 0, 1]
        G = get_loss("contrastive").grad(S, y, HP)
        # by hand: sum_neg w*S - sum_pos w*S over ordered pairs, w = 1/6
        expected = (0.7 + 0.7 - 0.8 - 0.8) / 6
        assert surrogate_F(S, y, G) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("name", sorted(LOSSES))
    def test_surrogate_gradient_is_frozen_gradient(self, name, rng):
        torch = pytest.importorskip("torch")
        S, y = random_similarity(rng)
        G = get_loss(name).grad(S, y, HP)
        St = torch.tensor(S, requires_grad=True)
        F = (torch.tensor(G) * St).sum()
        F.backward()
        np.testing.assert_array_equal(St.grad.numpy(), G)
        assert F.item() == pytest.approx(surrogate_F(S, y, G), rel=1e-12, abs=1e-15)

    def test_surrogate_fd(self, rng):
        S, y = random_similarity(rng)
        G = get_loss("lifted").grad(S, y, HP)
        loss = PairLoss("F", lambda S_, y_, hp: LossOutput(surrogate_F(S_, y_, G), G))
        np.testing.assert_allclose(fd_gradient(loss, S, y, HP, symmetric=False), G, atol=1e-9)
