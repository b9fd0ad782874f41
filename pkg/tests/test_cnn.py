"""The numpy CNN: forward shapes, gradients, Adam, training."""

import numpy as np
import pytest

from aad.cnn import (
    AdamState,
    CnnHyper,
    CnnModel,
    TrainBudget,
    WindowBank,
    adam_step,
    forward,
    gradients,
    hyper_grid,
    load_checkpoint,
    loss,
    reconstruct_cnn,
    save_checkpoint,
    train_cnn,
)
from aad.errors import DegenerateBatchError


def make_batch(rng, n=16, channels=2, window=64):
    x = rng.standard_normal((n, channels, window))
    y = rng.standard_normal(n)
    return x, y


def numeric_gradient(model, x, y, name, index, h=1e-5):
    """Central finite difference of the batch loss for one parameter."""
    theta = model.params[name]
    flat = theta.ravel()
    orig = flat[index]

    def eval_loss():
        preds, _ = model.forward_batch(x)
        return loss(preds, y)

    flat[index] = orig + h
    hi = eval_loss()
    flat[index] = orig - h
    lo = eval_loss()
    flat[index] = orig
    return (hi - lo) / (2.0 * h)


class TestForward:
    def test_grid_size(self):
        grid = hyper_grid()
        assert len(grid) == 6
        assert {(h.kernel_size, h.n_blocks) for h in grid} == {
            (3, 1), (3, 2), (3, 3), (5, 1), (5, 2), (5, 3)
        }

    def test_output_shapes(self):
        rng = np.random.default_rng(0)
        model = CnnModel(CnnHyper(3, 2), seed=1)
        x, _ = make_batch(rng)
        out = forward(model, x)
        assert out.shape == (16,)
        single = forward(model, x[0])
        assert isinstance(single, float)
        assert single == pytest.approx(out[0])

    def test_temporal_lengths_halve_per_block(self):
        model = CnnModel(CnnHyper(3, 3), seed=2).train()
        x = np.random.default_rng(3).standard_normal((8, 2, 64))
        _, caches = model.forward_batch(x)
        lengths = [c["in_shape"][2] for c in caches[:-1]] + [caches[-1]["h_shape"][2]]
        assert lengths == [64, 32, 16, 8]

    def test_dead_network_outputs_bias(self):
        model = CnnModel(CnnHyper(3, 2), seed=4)
        for name in model.params:
            if name != "readout.b":
                model.params[name] = np.zeros_like(model.params[name])
        model.params["readout.b"] = np.array([0.37])
        out = forward(model, np.random.default_rng(5).standard_normal((2, 64)))
        assert out == pytest.approx(0.37)

    def test_eval_mode_deterministic(self):
        model = CnnModel(CnnHyper(5, 2), seed=6)
        x = np.random.default_rng(7).standard_normal((4, 2, 64))
        a = forward(model, x)
        b = forward(model, x)
        assert np.array_equal(a, b)

    def test_wrong_shape_rejected(self):
        model = CnnModel(seed=8)
        with pytest.raises(ValueError):
            forward(model, np.zeros((3, 64)))
        with pytest.raises(ValueError):
            forward(model, np.zeros((8, 2, 32)))

    def test_batchnorm_train_statistics(self):
        # normalized maps have batch mean ~0 and variance ~1 before
        # scale/offset; recover them by inverting gamma/beta
        model = CnnModel(CnnHyper(3, 1), seed=9).train()
        x = np.random.default_rng(10).standard_normal((64, 2, 64))
        _, caches = model.forward_batch(x)
        xhat = caches[0]["xhat"]
        assert np.abs(xhat.mean(axis=(0, 2))).max() < 1e-6
        assert np.abs(xhat.var(axis=(0, 2)) - 1.0).max() < 1e-4

    def test_running_stats_update_only_when_asked(self):
        model = CnnModel(CnnHyper(3, 1), seed=11).train()
        x = np.random.default_rng(12).standard_normal((32, 2, 64))
        before = {k: v.copy() for k, v in model.running.items()}
        model.forward_batch(x, update_running=False)
        assert all(np.array_equal(before[k], model.running[k]) for k in before)
        model.forward_batch(x, update_running=True)
        assert any(not np.array_equal(before[k], model.running[k]) for k in before)


class TestLoss:
    def test_perfect_and_inverted(self):
        t = np.random.default_rng(0).standard_normal(32)
        assert loss(t, t) == pytest.approx(-1.0)
        assert loss(-t, t) == pytest.approx(1.0)

    def test_orthogonal_near_zero(self):
        rng = np.random.default_rng(1)
        n = 4096
        p, t = rng.standard_normal(n), rng.standard_normal(n)
        assert abs(loss(p, t)) < 3.0 / np.sqrt(n)

    def test_constant_targets_rejected(self):
        with pytest.raises(DegenerateBatchError):
            loss(np.random.default_rng(2).standard_normal(16), np.ones(16))

    def test_minimum_batch_size(self):
        with pytest.raises(ValueError):
            loss(np.zeros(4), np.arange(4.0))


# Data seeds whose pre-activations stay > 1e-4 from the ReLU kink, so
# central differences at h=1e-5 probe a smooth loss.
GRADCHECK_SEEDS = {3: 2, 5: 1}


def gradcheck_fixture(kernel_size, n_blocks, n=8):
    from aad.cnn import preactivation_margin

    model = CnnModel(CnnHyper(kernel_size, n_blocks), seed=0).train()
    rng = np.random.default_rng(GRADCHECK_SEEDS[kernel_size])
    x, y = make_batch(rng, n=n)
    assert preactivation_margin(model, x) > 1e-4, "fixture too close to a ReLU kink"
    return model, x, y


class TestGradients:
    @pytest.mark.parametrize("kernel_size", [3, 5])
    @pytest.mark.parametrize("n_blocks", [1, 2, 3])
    def test_finite_difference_sampled(self, kernel_size, n_blocks):
        # spot check per config; the exhaustive every-parameter check
        # over the whole grid runs in the acceptance suite
        model, x, y = gradcheck_fixture(kernel_size, n_blocks)
        _, grads = gradients(model, (x, y))
        check = np.random.default_rng(99)
        for name, g in grads.items():
            flat = g.ravel()
            picks = check.choice(flat.size, size=min(4, flat.size), replace=False)
            for index in picks:
                num = numeric_gradient(model, x, y, name, index)
                scale = max(abs(flat[index]), abs(num))
                assert (
                    abs(flat[index] - num) <= max(1e-4 * scale, 1e-8)
                ), f"{name}[{index}]: analytic {flat[index]}, numeric {num}"

    def test_requires_train_mode(self):
        model = CnnModel(seed=1)
        x, y = make_batch(np.random.default_rng(2))
        with pytest.raises(RuntimeError):
            gradients(model, (x, y))

    def test_dead_relu_conv_gradients_zero(self):
        # all-zero conv weights: every ReLU is dead, so conv kernels get
        # no gradient
        model = CnnModel(CnnHyper(3, 2), seed=3).train()
        for name in list(model.params):
            if ".conv." in name:
                model.params[name] = np.zeros_like(model.params[name])
        rng = np.random.default_rng(4)
        x, y = make_batch(rng, n=16)
        _, grads = gradients(model, (x, y))
        for name, g in grads.items():
            if ".conv.w" in name:
                assert np.allclose(g, 0.0)

    def test_descent_direction(self):
        model = CnnModel(CnnHyper(3, 2), seed=5).train()
        rng = np.random.default_rng(6)
        x, y = make_batch(rng, n=64)
        value, grads = gradients(model, (x, y))
        step = 1e-4
        for name, g in grads.items():
            model.params[name] -= step * g
        after, _ = gradients(model, (x, y))
        assert after < value


class TestAdam:
    def test_zero_gradient_no_update(self):
        params = {"w": np.ones(5)}
        state = AdamState()
        adam_step(state, params, {"w": np.zeros(5)})
        assert np.array_equal(params["w"], np.ones(5))

    def test_first_step_magnitude_is_learning_rate(self):
        params = {"w": np.zeros(7)}
        state = AdamState(lr=0.001)
        adam_step(state, params, {"w": np.full(7, 0.5)})
        mags = np.abs(params["w"])
        assert np.abs(mags - 0.001).max() < 1e-6 * 0.001

    def test_first_update_opposes_gradient(self):
        rng = np.random.default_rng(0)
        g = rng.standard_normal(20)
        g[np.abs(g) < 0.1] = 0.5  # keep away from zero
        params = {"w": np.zeros(20)}
        adam_step(AdamState(), params, {"w": g})
        assert np.all(np.sign(params["w"]) == -np.sign(g))


class TestTraining:
    def small_dataset(self, seed=0, n=1200, coupled=True):
        rng = np.random.default_rng(seed)
        feat = rng.standard_normal(n)
        kernel = np.array([0.2, 0.5, 1.0, 0.5, 0.2])
        drive = np.convolve(feat, kernel)[: n]
        eeg = np.stack([
            np.roll(drive, 3) + 0.3 * rng.standard_normal(n),
            np.roll(drive, 5) + 0.3 * rng.standard_normal(n),
        ])
        if not coupled:
            eeg = rng.standard_normal((2, n))
        return eeg, feat

    def test_learns_linear_mapping(self):
        eeg, feat = self.small_dataset(seed=1, n=4000)
        split = 3000
        budget = TrainBudget(batch_size=128, max_epochs=12, patience=3, seed=0)
        model = train_cnn(
            [(eeg[:, :split], feat[:split])],
            [(eeg[:, split:], feat[split:])],
            CnnHyper(3, 1),
            budget,
        )
        assert model.best_validation > 0.5

    def test_best_checkpoint_at_least_initial(self):
        eeg, feat = self.small_dataset(seed=2, n=1500, coupled=False)
        budget = TrainBudget(batch_size=128, max_epochs=3, patience=2, seed=1)
        model = train_cnn(
            [(eeg[:, :1000], feat[:1000])],
            [(eeg[:, 1000:], feat[1000:])],
            CnnHyper(3, 1),
            budget,
        )
        assert model.best_validation >= model.history[0]["val_rho"]

    def test_empty_training_data(self):
        with pytest.raises(ValueError):
            train_cnn([], [(np.zeros((2, 100)), np.zeros(100))], CnnHyper(3, 1))

    def test_window_bank_targets_at_onset(self):
        eeg = np.arange(200.0).reshape(2, 100)
        feat = np.arange(100.0)
        bank = WindowBank([(eeg, feat)], window=64)
        assert len(bank) == 37
        x, y = bank.gather(np.array([0, 5]))
        assert y.tolist() == [0.0, 5.0]
        assert np.allclose(x[1, 0], eeg[0, 5:69])

    def test_reconstruction_length(self):
        model = CnnModel(CnnHyper(3, 1), seed=7)
        eeg = np.random.default_rng(8).standard_normal((2, 300))
        recon = reconstruct_cnn(model, eeg)
        assert recon.shape == (300,)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = CnnModel(CnnHyper(5, 2), seed=10)
        x = np.random.default_rng(11).standard_normal((4, 2, 64))
        ref = forward(model, x)
        path = save_checkpoint(tmp_path / "model.f32", model)
        loaded = load_checkpoint(path)
        out = forward(loaded, x)
        assert np.allclose(out, ref, atol=1e-6)
