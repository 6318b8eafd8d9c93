import numpy as np
import pytest

from mslab.checks import end_to_end_check, random_labels
from mslab.core import HyperParams, ZeroNormRow
from mslab.evaluation import recall_at_k, synth_dataset
from mslab.losses import LOSSES, get_loss
from mslab.trainer import (
    AdamState,
    BatchSpec,
    InsufficientClassPopulation,
    TrainConfig,
    adam_step,
    backward,
    batch_sample,
    embed,
    forward,
    initial_params,
    loss_and_grad,
    train,
)


class TestBatchSample:
    def test_exact_population(self):
        y = np.array([0, 0, 1, 1])
        idx = batch_sample(y, BatchSpec(2, 2), np.random.default_rng(0))
        assert sorted(idx) == [0, 1, 2, 3]

    def test_small_class_ineligible(self):
        y = np.array([0, 0, 0, 1, 1, 1, 2])
        for seed in range(20):
            idx = batch_sample(y, BatchSpec(2, 3), np.random.default_rng(seed))
            assert 6 not in idx
        with pytest.raises(InsufficientClassPopulation):
            batch_sample(y, BatchSpec(3, 3), np.random.default_rng(0))

    def test_deterministic(self):
        y = np.repeat(np.arange(6), 7)
        a = batch_sample(y, BatchSpec(3, 5), np.random.default_rng(4))
        b = batch_sample(y, BatchSpec(3, 5), np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)

    def test_composition(self, rng):
        y = np.repeat(np.arange(10), 8)
        for _ in range(50):
            idx = batch_sample(y, BatchSpec(4, 5), rng)
            assert len(set(idx)) == 20
            _, counts = np.unique(y[idx], return_counts=True)
            np.testing.assert_array_equal(counts, [5, 5, 5, 5])

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            BatchSpec(1, 5)
        with pytest.raises(ValueError):
            BatchSpec(4, 1)


class TestForwardBackward:
    def test_identity(self, rng):
        X = rng.standard_normal((5, 3))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        np.testing.assert_allclose(forward(np.eye(3), X)[0], X, atol=1e-15)
        np.testing.assert_allclose(forward(2 * np.eye(3), X)[0], X, atol=1e-15)

    def test_hand_example(self):
        E, cache = forward(np.array([[1.0, 0.0]]), np.array([[3.0, 4.0]]))
        assert cache.Z[0, 0] == 3.0 and E[0, 0] == 1.0

    def test_zero_row(self):
        with pytest.raises(ZeroNormRow):
            forward(np.array([[1.0, 0.0]]), np.array([[0.0, 4.0]]))

    def test_zero_grad(self, rng):
        X = rng.standard_normal((4, 3))
        _, cache = forward(rng.standard_normal((2, 3)), X)
        assert not backward(np.zeros((4, 4)), cache, X).any()

    def test_radial_component_removed(self, rng):
        X = rng.standard_normal((6, 4))
        _, cache = forward(rng.standard_normal((3, 4)), X)
        E, norms = cache.E, cache.norms
        grad_S = rng.standard_normal((6, 6))
        grad_E = (grad_S + grad_S.T) @ E
        grad_Z = (grad_E - np.sum(grad_E * E, axis=1, keepdims=True) * E) / norms[:, None]
        np.testing.assert_allclose(np.sum(grad_Z * E, axis=1), 0.0, atol=1e-9)
        # purely radial upstream gradient: (G + G^T) E = E when G = I / 2
        assert np.abs(backward(np.eye(6) / 2, cache, X)).max() < 1e-12

    @pytest.mark.parametrize("name", [n for n, l in LOSSES.items() if l.has_value])
    def test_end_to_end(self, name, rng):
        result = end_to_end_check(get_loss(name), rng, n=3)
        assert result.passed, result


class TestAdam:
    def test_zero_grad_fresh_state(self):
        W = np.array([[1.0, -2.0]])
        state = AdamState.zeros_like(W)
        _, W2 = adam_step(state, W, np.zeros_like(W))
        np.testing.assert_array_equal(W2, W)

    def test_first_step(self):
        W = np.array([0.0])
        state = AdamState.zeros_like(W, lr=0.1)
        state, W = adam_step(state, W, np.array([1.0]))
        # bias-corrected m_hat = v_hat = 1 -> step = lr / (1 + eps)
        assert W[0] == pytest.approx(-0.1, rel=1e-7)
        assert state.t == 1

    def test_deterministic(self, rng):
        grads = rng.standard_normal((10, 2, 3))
        runs = []
        for _ in range(2):
            W = np.ones((2, 3))
            state = AdamState.zeros_like(W)
            for g in grads:
                state, W = adam_step(state, W, g)
            runs.append(W)
        np.testing.assert_array_equal(*runs)

    @pytest.mark.parametrize("seed", range(20))
    def test_descent_smoke(self, seed):
        rng = np.random.default_rng(seed)
        m, d, l = 10, 6, 4
        X = rng.standard_normal((m, d))
        y = random_labels(rng, m)
        W = rng.standard_normal((l, d))
        loss = get_loss("ms")
        E = embed(W, X)
        frozen = loss.freeze(E @ E.T, y, HyperParams())
        before, grad_W, _ = loss_and_grad(frozen, W, X, y, HyperParams())
        _, W2 = adam_step(AdamState.zeros_like(W, lr=1e-4), W, grad_W)
        after = loss_and_grad(frozen, W2, X, y, HyperParams())[0]
        assert after <= before


class TestTrain:
    @pytest.fixture
    def data(self):
        return synth_dataset(4, 20, 8, 0.2, 3)

    def test_zero_epochs(self, data):
        cfg = TrainConfig(epochs=0, seed=5, embed_dim=4)
        W, hist = train(cfg, data)
        np.testing.assert_array_equal(W, initial_params(cfg, 8))
        assert len(hist) == 0

    def test_deterministic(self, data):
        cfg = TrainConfig(epochs=5, seed=5, embed_dim=4, batch=BatchSpec(2, 5))
        (W1, h1), (W2, h2) = train(cfg, data), train(cfg, data)
        np.testing.assert_array_equal(W1, W2)
        assert h1.loss == h2.loss and h1.recall_at_1 == h2.recall_at_1

    def test_history_lengths(self, data):
        hist = train(TrainConfig(epochs=3, embed_dim=4, batch=BatchSpec(2, 5)), data)[1]
        assert len(hist.loss) == len(hist.recall_at_1) == len(hist.wall_time) == 3

    def test_unknown_method(self, data):
        with pytest.raises(KeyError):
            train(TrainConfig(method="histogram"), data)

    def test_binlifted_trains_through_surrogate(self, data):
        cfg = TrainConfig(method="binlifted", epochs=2, embed_dim=4, batch=BatchSpec(2, 5))
        hist = train(cfg, data)[1]
        assert np.isfinite(hist.loss).all()

    def test_improves_recall(self):
        data = synth_dataset(8, 50, 32, 0.3, 7)
        cfg = TrainConfig(method="ms", seed=7, lr=1e-4, epochs=60)
        W0 = initial_params(cfg, 32)
        before = recall_at_k(embed(W0, data.X[data.test]), data.y[data.test], (1,))[1]
        W, _ = train(cfg, data)
        after = recall_at_k(embed(W, data.X[data.test]), data.y[data.test], (1,))[1]
        assert after > before
