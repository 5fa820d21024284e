"""Targets, masks, the masked loss, Adam and the optimisation loop."""

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idip.dip import (
    CancelToken,
    DamageMask,
    NonFiniteLossError,
    TargetImage,
    masked_loss,
    optimize,
    pad_to_multiple,
)
from idip.engine import GradientTape, Tensor
from idip.network import NetworkConfig, NoiseInput, build_network
from idip.optim import MissingGradientError, adam_step

from oracles import masked_mse_reference, numeric_gradient, relative_error


class TestPadToMultiple:
    def test_no_pad_when_already_multiple(self, rng):
        a = rng.uniform(0, 1, (16, 8, 3))
        assert pad_to_multiple(a, 8) is a

    def test_pads_bottom_right_by_reflection(self):
        a = np.arange(12, dtype=np.float64).reshape(3, 4)
        out = pad_to_multiple(a, 4)
        assert out.shape == (4, 4)
        np.testing.assert_array_equal(out[3], a[1])

    def test_tiny_input_uses_edge_mode(self):
        a = np.ones((1, 1))
        out = pad_to_multiple(a, 8)
        assert out.shape == (8, 8)
        np.testing.assert_array_equal(out, np.ones((8, 8)))


class TestTargetImage:
    def test_round_trip_crop(self, rng):
        img = rng.uniform(0, 1, (30, 20, 3)).astype(np.float32)
        t = TargetImage.from_array(img, multiple=8)
        assert t.pixels.shape == (1, 3, 32, 24)
        assert (t.orig_height, t.orig_width) == (30, 20)
        np.testing.assert_array_equal(t.to_array(), img)

    def test_rejects_wrong_layout(self, rng):
        with pytest.raises(ValueError):
            TargetImage.from_array(rng.uniform(0, 1, (8, 8)))


class TestDamageMask:
    def test_counts(self):
        grid = np.array([[1, 0], [1, 1]], dtype=np.uint8)
        m = DamageMask(grid)
        assert m.known_count() == 3
        assert m.damaged_count() == 1
        assert m.known_fraction() == pytest.approx(0.75)

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            DamageMask(np.array([[2, 0]], dtype=np.uint8))

    def test_weight_tensor_broadcast(self):
        grid = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        w = DamageMask(grid).weight_tensor(channels=3, dtype=np.float32)
        assert w.shape == (1, 3, 2, 2)
        np.testing.assert_array_equal(w.data[0, 0], grid.astype(np.float32))
        np.testing.assert_array_equal(w.data[0, 2], grid.astype(np.float32))


class TestMaskedLoss:
    def _setup(self, rng, h=8, w=8):
        out = Tensor(rng.uniform(0, 1, (1, 3, h, w)).astype(np.float32))
        target = TargetImage.from_array(rng.uniform(0, 1, (h, w, 3)))
        grid = (rng.uniform(0, 1, (h, w)) > 0.4).astype(np.uint8)
        return out, target, DamageMask(grid)

    def test_zero_when_output_equals_target(self, rng):
        _, target, mask = self._setup(rng)
        out = Tensor(target.pixels.data.copy())
        assert masked_loss(out, target, mask).item() == 0.0

    def test_single_known_pixel_half_residual(self):
        out = Tensor(np.zeros((1, 3, 2, 2), dtype=np.float32))
        arr = np.zeros((2, 2, 3))
        arr[0, 0] = 0.5
        target = TargetImage.from_array(arr)
        grid = np.zeros((2, 2), dtype=np.uint8)
        grid[0, 0] = 1
        loss = masked_loss(out, target, DamageMask(grid)).item()
        # one known pixel -> three weighted channel entries, each 0.25
        assert loss == pytest.approx(3 * 0.25 / 3, abs=1e-12)

    def test_matches_brute_force(self, rng):
        out, target, mask = self._setup(rng)
        weight = mask.weight_tensor(channels=3, dtype=np.float64)
        expected = masked_mse_reference(out.data, target.pixels.data, weight.data)
        assert masked_loss(out, target, mask).item() == pytest.approx(expected, abs=1e-6)

    def test_all_damaged_warns_and_returns_zero(self, rng, caplog):
        out, target, _ = self._setup(rng)
        mask = DamageMask(np.zeros((8, 8), dtype=np.uint8))
        with caplog.at_level(logging.WARNING):
            value = masked_loss(out, target, mask).item()
        assert value == 0.0
        assert any("vacuous" in r.message for r in caplog.records)

    def test_mask_blind_to_damaged_target_pixels(self, rng):
        """Changing x_0 inside the damaged region leaves the loss unchanged."""
        out, target, mask = self._setup(rng)
        base = masked_loss(out, target, mask).item()
        pixels = target.pixels.data.copy()
        damaged = mask.grid == 0
        pixels[0, :, damaged] = rng.uniform(0, 1, (int(damaged.sum()), 3)).astype(np.float32)
        poked = TargetImage(Tensor(pixels), target.orig_height, target.orig_width)
        assert masked_loss(out, poked, mask).item() == base


class TestAdamStep:
    def _params_with_grad(self, value, grad):
        from idip.network import ModelParameters

        params = ModelParameters()
        t = params.register("w", np.full((4,), value, dtype=np.float64))
        t.grad = np.full((4,), grad, dtype=np.float64)
        return params, t

    def test_first_step_magnitude(self):
        params, t = self._params_with_grad(0.0, 1.0)
        adam_step(params, lr=0.01, betas=(0.9, 0.999), eps=1e-8)
        delta = t.data - 0.0
        assert np.all(np.abs(delta + 0.01) < 1e-6)
        assert params.step == 1

    def test_zero_gradient_keeps_parameters(self):
        params, t = self._params_with_grad(0.7, 0.0)
        adam_step(params)
        np.testing.assert_array_equal(t.data, np.full((4,), 0.7))

    def test_missing_gradient_rejected(self):
        from idip.network import ModelParameters

        params = ModelParameters()
        params.register("w", np.zeros(2, dtype=np.float32))
        with pytest.raises(MissingGradientError):
            adam_step(params)

    def test_gradients_cleared_after_step(self):
        params, t = self._params_with_grad(0.0, 1.0)
        adam_step(params)
        assert t.grad is None

    def test_two_bags_same_inputs_identical(self):
        a, ta = self._params_with_grad(0.3, 0.5)
        b, tb = self._params_with_grad(0.3, 0.5)
        adam_step(a)
        adam_step(b)
        np.testing.assert_array_equal(ta.data, tb.data)

    def test_against_reference_sequence(self, rng):
        """Several steps against a literal transcription of the update rule."""
        from idip.network import ModelParameters

        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        theta_ref = rng.uniform(-1, 1, 5)
        m = np.zeros(5)
        v = np.zeros(5)
        params = ModelParameters()
        t = params.register("w", theta_ref.copy())
        for step in range(1, 6):
            g = rng.uniform(-1, 1, 5)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**step)
            vhat = v / (1 - b2**step)
            theta_ref = theta_ref - lr * mhat / (np.sqrt(vhat) + eps)
            t.grad = g.copy()
            adam_step(params, lr=lr, betas=(b1, b2), eps=eps)
            np.testing.assert_allclose(t.data, theta_ref, atol=1e-12)


def _tiny_setup(seed=7, h=8, w=8):
    cfg = NetworkConfig(depth=2, channels=(3, 4), noise_channels=2, seed=seed)
    net, params = build_network(cfg, seed=seed)
    z = NoiseInput.create(cfg, h, w, seed=seed)
    rng = np.random.default_rng(seed)
    target = TargetImage.from_array(rng.uniform(0, 1, (h, w, 3)).astype(np.float32), cfg.size_multiple)
    grid = (rng.uniform(0, 1, (h, w)) > 0.3).astype(np.uint8)
    return cfg, net, params, z, target, DamageMask(grid)


class TestOptimize:
    def test_single_iteration_single_callback(self):
        cfg, net, params, z, target, mask = _tiny_setup()
        calls = []
        optimize(net, params, z, target, mask, 1, config=cfg,
                 callback=lambda it, rec, out: calls.append((it, rec.value, out.shape)))
        assert len(calls) == 1
        assert calls[0][0] == 1
        assert calls[0][2] == (1, 3, 8, 8)

    def test_trace_iterations_sequential(self):
        cfg, net, params, z, target, mask = _tiny_setup()
        res = optimize(net, params, z, target, mask, 5, config=cfg)
        assert [r.iteration for r in res.trace] == [1, 2, 3, 4, 5]
        assert all(np.isfinite(r.value) for r in res.trace)

    def test_cancel_at_iteration_k_gives_k_entries(self):
        cfg, net, params, z, target, mask = _tiny_setup()
        cancel = CancelToken()

        def cb(it, rec, out):
            if it == 3:
                cancel.set()

        res = optimize(net, params, z, target, mask, 10, config=cfg, callback=cb, cancel=cancel)
        assert res.cancelled
        assert len(res.trace) == 3

    def test_cancel_before_start_gives_empty_trace(self):
        cfg, net, params, z, target, mask = _tiny_setup()
        cancel = CancelToken()
        cancel.set()
        res = optimize(net, params, z, target, mask, 10, config=cfg, cancel=cancel)
        assert res.cancelled
        assert res.trace == []

    def test_non_finite_loss_rolls_back(self):
        cfg, net, params, z, target, mask = _tiny_setup()
        optimize(net, params, z, target, mask, 2, config=cfg)
        good = params.checksum()
        bad_pixels = target.pixels.data.copy()
        bad_pixels[0, 0, 0, 0] = np.nan
        bad_target = TargetImage(Tensor(bad_pixels), target.orig_height, target.orig_width)
        with pytest.raises(NonFiniteLossError):
            optimize(net, params, z, bad_target, mask, 3, config=cfg)
        assert params.checksum() == good

    def test_output_matches_final_parameters(self):
        cfg, net, params, z, target, mask = _tiny_setup()
        res = optimize(net, params, z, target, mask, 4, config=cfg)
        from idip.engine import no_grad

        with no_grad():
            again = net.forward(z.z).data
        np.testing.assert_array_equal(res.output, again)

    def test_deterministic_across_runs(self):
        traces = []
        outputs = []
        for _ in range(2):
            cfg, net, params, z, target, mask = _tiny_setup(seed=3)
            res = optimize(net, params, z, target, mask, 6, config=cfg)
            traces.append([r.value for r in res.trace])
            outputs.append(res.output)
        assert traces[0] == traces[1]
        np.testing.assert_array_equal(outputs[0], outputs[1])


class TestFullNetworkGradients:
    """Whole forward + loss against finite differences on an 8x8 input."""

    def _errors(self, dtype):
        cfg = NetworkConfig(depth=2, channels=(3, 4), noise_channels=2, seed=7)
        net, params = build_network(cfg, seed=7, dtype=dtype)
        z = NoiseInput.create(cfg, 8, 8, seed=7, dtype=dtype)
        rng = np.random.default_rng(3)
        target = TargetImage.from_array(rng.uniform(0, 1, (8, 8, 3)), cfg.size_multiple, dtype=dtype)
        grid = (rng.uniform(0, 1, (8, 8)) > 0.3).astype(np.uint8)
        mask = DamageMask(grid)

        out = net.forward(z.z)
        loss = masked_loss(out, target, mask)
        GradientTape.trace(loss).backward()
        analytic = {n: params[n].grad.copy() for n in params.names}

        net64, params64 = build_network(cfg, seed=7, dtype=np.float64)
        z64 = NoiseInput.create(cfg, 8, 8, seed=7, dtype=np.float64)
        t64 = TargetImage.from_array(
            target.pixels.data[0].transpose(1, 2, 0).astype(np.float64), cfg.size_multiple, dtype=np.float64
        )

        def f():
            o = net64.forward(z64.z)
            return masked_loss(o, t64, mask).item()

        arrays = [params64[n].data for n in params64.names]
        numeric = numeric_gradient(f, arrays, eps=1e-5)
        return [relative_error(analytic[n], num) for n, num in zip(params64.names, numeric)]

    def test_f64_tolerance(self):
        errs = self._errors(np.float64)
        assert max(errs) < 1e-5, max(errs)

    def test_f32_tolerance(self):
        errs = self._errors(np.float32)
        assert max(errs) < 1e-3, max(errs)


@settings(max_examples=15, deadline=None)
@given(
    h=st.integers(min_value=1, max_value=20),
    w=st.integers(min_value=1, max_value=20),
    multiple=st.sampled_from([1, 2, 4, 8]),
)
def test_property_pad_to_multiple_shape(h, w, multiple):
    a = np.zeros((h, w, 3))
    out = pad_to_multiple(a, multiple)
    assert out.shape[0] % multiple == 0
    assert out.shape[1] % multiple == 0
    assert out.shape[0] - h < multiple
    assert out.shape[1] - w < multiple
    np.testing.assert_array_equal(out[:h, :w], a)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31 - 1), frac=st.floats(min_value=0.05, max_value=0.95))
def test_property_masked_loss_scale_invariant_in_mask_size(seed, frac):
    """Loss magnitude is count-normalized: all-known vs half-known on equal residuals."""
    rng = np.random.default_rng(seed)
    out = Tensor(np.full((1, 3, 8, 8), 0.25, dtype=np.float32))
    target = TargetImage.from_array(np.full((8, 8, 3), 0.75))
    grid = (rng.uniform(0, 1, (8, 8)) < frac).astype(np.uint8)
    if grid.sum() == 0:
        grid[0, 0] = 1
    partial = masked_loss(out, target, DamageMask(grid)).item()
    full = masked_loss(out, target, DamageMask(np.ones((8, 8), np.uint8))).item()
    assert partial == pytest.approx(full, abs=1e-12)
