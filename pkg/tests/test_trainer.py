import math

import numpy as np
import pytest

from bregbench.checks import central_difference, mlp_gradient_error, random_simplex, relative_error
from bregbench.data import LabeledDataset, SynthConfig, generate_synthetic, split
from bregbench.divergences import ALL_LOSSES, LossId, batch_loss, loss_value, softmax
from bregbench.errors import ConfigError, NumericDomainError, ShapeError, SingularGradientError
from bregbench.metrics import max_accuracy_ranking
from bregbench.trainer import (
    AdamState,
    MlpParams,
    TrainConfig,
    adam_step,
    backward,
    evaluate,
    evaluate_predictions,
    forward,
    glorot_init,
    train,
)


@pytest.fixture(scope="module")
def small_ds():
    return generate_synthetic(SynthConfig(N=300, d=6, K=4, annotators_per_item=20, seed=1))


class TestGlorot:
    def test_seeded(self):
        assert glorot_init([5, 7, 3], 4) == glorot_init([5, 7, 3], 4)
        assert glorot_init([5, 7, 3], 4) != glorot_init([5, 7, 3], 5)

    def test_bounds(self):
        p = glorot_init([100, 100], 0)
        limit = math.sqrt(6 / 200)
        assert np.max(np.abs(p.weights[0])) <= limit
        # uniform draws should come close to the bound
        assert np.max(np.abs(p.weights[0])) > 0.99 * limit

    def test_zero_biases(self):
        p = glorot_init([4, 8, 8, 2], 1)
        assert all(np.all(b == 0.0) for b in p.biases)
        assert p.layer_sizes == [4, 8, 8, 2]


class TestForward:
    def test_zero_network_is_uniform(self):
        p = glorot_init([3, 5, 4], 0)
        p = MlpParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
        _, probs = forward(p, [1.0, -2.0, 3.0])
        np.testing.assert_array_equal(probs, [0.25] * 4)

    def test_logit_shift_leaves_probabilities(self):
        p = glorot_init([3, 5, 4], 2)
        x = np.array([0.3, -1.0, 2.0])
        logits, probs = forward(p, x)
        shifted = p.copy()
        shifted.biases[-1] = shifted.biases[-1] + 7.5
        logits2, probs2 = forward(shifted, x)
        np.testing.assert_allclose(logits2, logits + 7.5, atol=1e-14)
        np.testing.assert_allclose(probs2, probs, atol=1e-15)

    def test_single_layer_hand_weights(self):
        w = np.array([[1.0, -2.0], [3.0, 0.5]])
        b = np.array([0.25, -0.75])
        logits, probs = forward(MlpParams([w], [b]), [1.0, 0.0])
        np.testing.assert_array_equal(logits, [1.25, -2.75])
        np.testing.assert_allclose(probs, softmax([1.25, -2.75]))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            forward(glorot_init([3, 2], 0), [1.0, 2.0])


class TestBackward:
    @pytest.mark.parametrize("loss", ALL_LOSSES)
    def test_finite_differences_3_4_2(self, loss):
        assert mlp_gradient_error(loss, np.random.default_rng(17), points=20) < 1e-4

    def test_batch_gradient_is_mean(self):
        rng = np.random.default_rng(0)
        params = glorot_init([3, 5, 3], 1)
        x = rng.normal(size=(6, 3))
        p = random_simplex(rng, 6, 3)
        mean = np.mean([backward(params, xi, pi, LossId.JENSEN_SHANNON).flatten() for xi, pi in zip(x, p)], axis=0)
        np.testing.assert_allclose(backward(params, x, p, LossId.JENSEN_SHANNON).flatten(), mean, atol=1e-15)

    def test_deeper_network_finite_differences(self):
        rng = np.random.default_rng(4)
        params = glorot_init([4, 6, 5, 3], 3)
        params.biases = [rng.normal(0, 0.3, size=b.shape) for b in params.biases]
        x = rng.normal(size=(5, 4))
        p = random_simplex(rng, 5, 3, floor=0.05)
        sizes = params.layer_sizes

        def f(vec):
            _, q = forward(MlpParams.unflatten(vec, sizes), x)
            return float(np.mean(loss_value(LossId.ITAKURA_SAITO, p, q)))

        numeric = central_difference(f, params.flatten())
        assert relative_error(backward(params, x, p, LossId.ITAKURA_SAITO).flatten(), numeric) < 1e-4

    @pytest.mark.parametrize("loss", [l for l in ALL_LOSSES if l.is_bregman])
    def test_stationary_when_target_is_output(self, loss):
        params = glorot_init([3, 4, 3], 5)
        x = np.array([0.2, -0.4, 1.1])
        _, q = forward(params, x)
        grads = backward(params, x, q, loss)
        assert np.max(np.abs(grads.flatten())) < 1e-12

    def test_cross_entropy_equals_forward_kl(self):
        rng = np.random.default_rng(6)
        params = glorot_init([5, 8, 4], 2)
        x = rng.normal(size=(10, 5))
        p = random_simplex(rng, 10, 4)
        ce = backward(params, x, p, LossId.CROSS_ENTROPY).flatten()
        kl = backward(params, x, p, LossId.FORWARD_KL).flatten()
        assert np.max(np.abs(ce - kl)) <= 1e-9

    def test_rmse_without_floor_is_singular(self):
        params = glorot_init([2, 3], 0)
        x = np.array([0.5, 0.5])
        _, q = forward(params, x)
        with pytest.raises(SingularGradientError):
            backward(params, x, q, LossId.RMSE, rmse_floor=0.0)
        assert np.all(backward(params, x, q, LossId.RMSE).flatten() == 0.0)


class TestAdam:
    @pytest.fixture
    def params(self):
        return glorot_init([3, 4, 2], 0)

    def test_zero_gradient(self, params):
        state = AdamState.zeros_like(params)
        zeros = MlpParams([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])
        new, new_state = adam_step(params, zeros, state, TrainConfig())
        assert new == params
        assert new_state.t == 1

    def test_first_step_is_lr_times_sign(self, params):
        rng = np.random.default_rng(1)
        grads = MlpParams.unflatten(rng.normal(size=params.flatten().size), params.layer_sizes)
        cfg = TrainConfig(learning_rate=0.01)
        new, _ = adam_step(params, grads, AdamState.zeros_like(params), cfg)
        g = grads.flatten()
        expected = -0.01 * g / (np.abs(g) + cfg.adam_epsilon)
        np.testing.assert_allclose(new.flatten() - params.flatten(), expected, rtol=1e-9, atol=1e-15)
        np.testing.assert_allclose(np.abs(new.flatten() - params.flatten()), 0.01, rtol=1e-4)

    def test_deterministic_and_pure(self, params):
        grads = MlpParams.unflatten(np.linspace(-1, 1, params.flatten().size), params.layer_sizes)
        state = AdamState.zeros_like(params)
        before = params.copy()
        a = adam_step(params, grads, state, TrainConfig())
        b = adam_step(params, grads, state, TrainConfig())
        assert a[0] == b[0] and a[1].t == b[1].t == 1
        assert params == before and state.t == 0


class TestTrainConfig:
    @pytest.mark.parametrize(
        "bad",
        [{"beta1": 1.0}, {"beta2": 0.0}, {"learning_rate": -1.0}, {"epochs": 0}, {"hidden_sizes": [0]}, {"clip_epsilon": 1e-2}],
    )
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon) == (
            20,
            128,
            0.001,
            0.9,
            0.999,
            1e-8,
        )


class TestTrain:
    def test_zero_learning_rate_records_initial_loss(self, small_ds):
        cfg = TrainConfig(loss=LossId.MSE, epochs=1, learning_rate=0.0, hidden_sizes=(8,), seed=3)
        report = train(small_ds, cfg)
        _, q = forward(report.final_params, small_ds.features)
        assert report.loss_history[0] == pytest.approx(batch_loss(LossId.MSE, small_ds.targets, q), rel=1e-14)
        assert report.epochs_run == 1 and len(report.loss_history) == 1

    def test_deterministic(self, small_ds):
        cfg = TrainConfig(loss=LossId.JENSEN_SHANNON, epochs=5, batch_size=32, hidden_sizes=(8,), seed=9)
        assert train(small_ds, cfg) == train(small_ds, cfg)
        assert train(small_ds, cfg) != train(small_ds, cfg.replace(seed=10))

    def test_cross_entropy_and_forward_kl_trajectories(self):
        ds = generate_synthetic(SynthConfig(N=500, seed=2))
        cfg = TrainConfig(epochs=20, deterministic_full_batch=True, seed=1)
        ce = train(ds, cfg.replace(loss=LossId.CROSS_ENTROPY))
        kl = train(ds, cfg.replace(loss=LossId.FORWARD_KL))
        assert ce.final_params.max_abs_diff(kl.final_params) <= 1e-6
        # the loss values differ by the target entropy, which is constant
        np.testing.assert_allclose(np.diff(ce.loss_history), np.diff(kl.loss_history), atol=1e-12)

    def test_sse_matches_mse_when_adam_epsilon_scales_with_k(self):
        ds = generate_synthetic(SynthConfig(N=500, seed=2))
        cfg = TrainConfig(epochs=20, deterministic_full_batch=True, seed=1)
        mse = train(ds, cfg.replace(loss=LossId.MSE))
        sse = train(ds, cfg.replace(loss=LossId.SQUARED_EUCLIDEAN, adam_epsilon=cfg.adam_epsilon * ds.k))
        assert sse.final_params.max_abs_diff(mse.final_params) <= 1e-6

    @pytest.mark.parametrize("loss", [l for l in ALL_LOSSES if l.is_bregman])
    def test_bregman_losses_decrease_on_separable_data(self, loss):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(400, 2))
        side = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
        targets = np.where(side[:, None] == np.arange(2), 0.9, 0.1)
        ds = LabeledDataset(x, targets)
        report = train(ds, TrainConfig(loss=loss, epochs=5, batch_size=32, hidden_sizes=(16,), learning_rate=0.01, seed=4))
        assert np.all(np.diff(report.loss_history) < 0)

    def test_numeric_failure_carries_location(self, small_ds, monkeypatch):
        import bregbench.trainer as trainer_mod

        def boom(*args, **kwargs):
            raise NumericDomainError("forced")

        monkeypatch.setattr(trainer_mod, "loss_gradient", boom)
        with pytest.raises(NumericDomainError, match="epoch 0 batch 0"):
            train(small_ds, TrainConfig(epochs=1, hidden_sizes=(4,)))


class TestEvaluate:
    def test_oracle_predictions(self, small_ds):
        b = evaluate_predictions(small_ds.targets, small_ds.targets)
        assert b.macro_f1 == 1.0
        assert b.ndcg == pytest.approx(1.0, abs=1e-15)
        assert b.acc_rank == pytest.approx(max_accuracy_ranking(small_ds.k), abs=1e-15)
        assert b.losses[LossId.FORWARD_KL] == pytest.approx(0.0, abs=1e-12)

    def test_uniform_model_is_imperfect(self):
        t = np.array([[0.6, 0.3, 0.1], [0.2, 0.7, 0.1]])
        b = evaluate_predictions(t, np.full_like(t, 1 / 3))
        # hand computation: instance 1 is ideal, instance 2 puts 0.2 first
        l3, l4 = math.log2(3), math.log2(4)
        second = (0.2 + 0.7 / l3 + 0.1 / l4) / (0.7 + 0.2 / l3 + 0.1 / l4)
        assert b.ndcg == pytest.approx((1 + second) / 2, abs=1e-15)
        assert b.ndcg < 1.0

    def test_instance_means_combine(self, small_ds):
        params = train(small_ds, TrainConfig(epochs=2, hidden_sizes=(8,), seed=0)).final_params
        a, b = split(small_ds, 0.7, seed=0)
        whole = evaluate(params, a.concat(b))
        ea, eb = evaluate(params, a), evaluate(params, b)
        for metric in ("ndcg", "acc_rank"):
            combined = (a.n * getattr(ea, metric) + b.n * getattr(eb, metric)) / small_ds.n
            assert getattr(whole, metric) == pytest.approx(combined, abs=1e-12)
        for loss in ALL_LOSSES:
            combined = (a.n * ea.losses[loss] + b.n * eb.losses[loss]) / small_ds.n
            assert whole.losses[loss] == pytest.approx(combined, rel=1e-12)

    def test_shape_mismatch(self, small_ds):
        with pytest.raises(ShapeError):
            evaluate(glorot_init([3, 4], 0), small_ds)

    def test_truth_reference(self, small_ds):
        params = glorot_init([small_ds.d, 4, small_ds.k], 0)
        assert evaluate(params, small_ds, use_truth=True).n == small_ds.n
