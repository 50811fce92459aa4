import rtcnet.network
from rtcnet.network import build, config_param_count, forward, param_count, residual_blocks, shape_chain
from rtcnet.structure import NetworkConfig
from rtcnet.tensor import ShapeError, random_tensor

from conftest import REDUCED, TINY

import dataclasses

import numpy as np
import pytest

def hand_count(config: NetworkConfig) -> int:
    """Parameter count written out block by block."""
    def conv(k, cin, cout):
        return k * k * cin * cout + cout

    total, cin = 0, config.channels
    for cout, count in zip(config.encoder_channels, config.block_conv_counts):
        total += conv(3, cin, cout) + (count - 1) * conv(3, cout, cout)
        if cin != cout:
            total += conv(1, cin, cout)
        cin = cout
    k = 4 if config.upsample_mode == "transposed_conv" else 3
    for cout in config.decoder_channels:
        total += conv(k, cin, cout)
        cin = cout
    return total + conv(1, cin, config.num_classes)

def target_for(batch: np.ndarray, seed: int = 0) -> np.ndarray:
    n, _, h, w = batch.shape
    return np.random.default_rng(seed).integers(0, 2, (n, 1, h, w)).astype(batch.dtype)

class TestPlan:
    def test_default_count(self):
        total = config_param_count(NetworkConfig())
        assert total == 10_627_138
        assert 10_000_000 <= total <= 12_500_000

    @pytest.mark.parametrize("config", [NetworkConfig(), TINY, REDUCED,
                                        dataclasses.replace(TINY, upsample_mode="unpool")])
    def test_matches_hand_count(self, config):
        assert config_param_count(config) == hand_count(config)
        assert param_count(build(config, seed=0)) == hand_count(config)

    def test_block_wiring(self):
        blocks = residual_blocks(NetworkConfig())
        assert [block.conv_count for block in blocks] == [2, 2, 3, 3]
        assert [len(block.junctions) for block in blocks] == [1, 1, 2, 2]
        assert [j.kind for j in blocks[2].junctions] == ["non-identity", "identity"]
        assert blocks[0].junctions[0].skip == "block1.skip1"

    def test_identity_block_without_projection(self):
        blocks = residual_blocks(TINY)
        assert [j.skip for j in blocks[3].junctions] == [None, None]

    def test_default_shape_chain(self):
        rows = {name: shape for name, _, shape, _ in shape_chain(NetworkConfig())}
        assert rows["input"] == (448, 512, 3)
        assert rows["block1.pool"] == (224, 256, 64)
        assert rows["block4.pool"] == (28, 32, 512)
        assert rows["decoder1.up"] == (56, 64, 256)
        assert rows["decoder4.up"] == (448, 512, 64)
        assert rows["classifier"] == (448, 512, 2)

    def test_shape_chain_params_sum_to_total(self):
        for config in (NetworkConfig(), REDUCED):
            assert sum(row[3] for row in shape_chain(config)) == config_param_count(config)

    @pytest.mark.parametrize("dims", [(440, 512, 3), (448, 500, 3)])
    def test_input_must_divide_by_16(self, dims):
        with pytest.raises(ValueError, match="multiple of 16"):
            NetworkConfig(input_dims=dims).validate()

    def test_unpool_needs_mirrored_channels(self):
        with pytest.raises(ValueError, match="mirrored"):
            dataclasses.replace(TINY, decoder_channels=(4, 4, 4, 4), upsample_mode="unpool").validate()

    def test_block_counts_fixed(self):
        with pytest.raises(ValueError):
            dataclasses.replace(TINY, block_conv_counts=(2, 2, 2, 2)).validate()


class TestBuild:
    @pytest.mark.parametrize("name,fan_in", [("block4.conv2", 64 * 9), ("block3.skip1", 16),
                                             ("decoder1.up", 64 * 16), ("decoder3.up", 16 * 16)])
    def test_he_scale_uses_the_full_kernel_fan_in(self, name, fan_in):
        kernel = build(REDUCED, seed=0, dtype=np.float64).params[f"{name}.kernel"]
        assert kernel.std() == pytest.approx(np.sqrt(2.0 / fan_in), rel=0.15)

    def test_biases_start_at_zero(self):
        model = build(REDUCED, seed=0)
        assert all(not value.any() for key, value in model.params.items() if key.endswith(".bias"))


class TestForward:
    def test_reduced_shapes(self):
        model = build(REDUCED, seed=0)
        trace = []
        logits = forward(model, random_tensor((2, 3, 64, 64), seed=1, dtype=np.float32), trace=trace)
        assert logits.shape == (2, 2, 64, 64)
        shapes = dict(trace)
        assert shapes["block4.pool"] == (2, 64, 4, 4)
        assert shapes["decoder4.up"] == (2, 8, 64, 64)

    def test_trace_agrees_with_shape_chain(self):
        model = build(REDUCED, seed=0)
        trace = []
        forward(model, np.zeros((1, 3, 64, 64), dtype=np.float32), trace=trace)
        analytic = {name: shape for name, _, shape, _ in shape_chain(REDUCED)}
        for name, (_, c, h, w) in trace:
            if name in analytic:
                assert analytic[name] == (h, w, c), name

    def test_default_network_on_a_full_size_image(self):
        model = build(NetworkConfig(), seed=0)
        image = np.random.default_rng(0).uniform(0, 1, (1, 3, 448, 512)).astype(np.float32)
        trace = []
        logits = forward(model, image, trace=trace)
        shapes = dict(trace)
        assert shapes["block4.pool"] == (1, 512, 28, 32)
        assert shapes["decoder4.up"] == (1, 64, 448, 512)
        assert logits.shape == (1, 2, 448, 512)
        assert logits.dtype == np.float32 and np.isfinite(logits).all()

    def test_unpool_mode_shapes(self):
        model = build(dataclasses.replace(TINY, upsample_mode="unpool"), seed=0)
        assert forward(model, random_tensor((1, 3, 16, 16), seed=2)).shape == (1, 2, 16, 16)

    def test_wrong_input_shape(self):
        with pytest.raises(ShapeError):
            forward(build(TINY, seed=0), np.zeros((1, 3, 32, 16)))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            forward(build(TINY, seed=0), np.zeros((1, 3, 16, 16)), mode="dropout")

    def test_deterministic(self):
        batch = random_tensor((2, 3, 16, 16), seed=3, dtype=np.float32)
        first = forward(build(TINY, seed=7), batch)
        second = forward(build(TINY, seed=7), batch)
        np.testing.assert_array_equal(first, second)
        assert not np.array_equal(first, forward(build(TINY, seed=8), batch))

    def test_train_and_eval_agree(self):
        model = build(TINY, seed=0)
        batch = random_tensor((1, 3, 16, 16), seed=4)
        np.testing.assert_array_equal(forward(model, batch, "train"), forward(model, batch, "eval"))

    def test_identity_junction_passes_input_when_convs_are_zero(self):
        model = build(TINY, seed=0, dtype=np.float64)
        block = residual_blocks(TINY)[3]
        for junction in block.junctions:
            for name in junction.convs:
                model.params[f"{name}.kernel"][:] = 0
                model.params[f"{name}.bias"][:] = 0
        x = random_tensor((1, 4, 2, 2), seed=5)
        out, _ = rtcnet.network.residual_block_forward(model, block, x)
        np.testing.assert_array_equal(out, x)

    def test_projected_junction_outputs_skip_when_convs_are_zero(self):
        model = build(TINY, seed=0, dtype=np.float64)
        block = residual_blocks(TINY)[0]
        for name in block.junctions[0].convs:
            model.params[f"{name}.kernel"][:] = 0
        x = random_tensor((1, 3, 16, 16), seed=6)
        out, _ = rtcnet.network.residual_block_forward(model, block, x)
        np.testing.assert_allclose(out, rtcnet.network.conv2d_forward(x, model.spec("block1.skip1")), rtol=1e-12)

    def test_predict_mask(self):
        model = build(TINY, seed=0)
        batch = random_tensor((2, 3, 16, 16), seed=7, dtype=np.float32)
        logits = forward(model, batch)
        mask = rtcnet.network.predict_mask(model, batch)
        assert mask.shape == (2, 1, 16, 16) and mask.dtype == np.uint8
        np.testing.assert_array_equal(mask[:, 0], logits[:, 1] > logits[:, 0])


class TestBackward:
    def test_gradients_cover_every_parameter(self):
        model = build(TINY, seed=0, dtype=np.float64)
        batch = random_tensor((2, 3, 16, 16), seed=1)
        _, grads = rtcnet.network.backward(model, batch, target_for(batch))
        assert list(grads) == list(model.params)
        for key, grad in grads.items():
            assert grad.shape == model.params[key].shape

    def test_zero_class_weights(self):
        model = build(TINY, seed=0, dtype=np.float64)
        batch = random_tensor((1, 3, 16, 16), seed=1)
        loss, grads = rtcnet.network.backward(model, batch, target_for(batch), (0.0, 0.0))
        assert loss == 0.0
        assert all(not grad.any() for grad in grads.values())

    @pytest.mark.parametrize("mode", ["transposed_conv", "unpool"])
    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, mode, seed):
        model = build(dataclasses.replace(TINY, upsample_mode=mode), seed=seed, dtype=np.float64)
        batch = random_tensor((2, 3, 16, 16), seed=seed + 10)
        target = target_for(batch, seed)
        error = rtcnet.network.grad_check(model, batch, target, (1.0, 2.0), eps=1e-6, seed=seed)
        assert error < 1e-3

    def test_grad_check_needs_double(self):
        model = build(TINY, seed=0)
        batch = np.zeros((1, 3, 16, 16), dtype=np.float32)
        with pytest.raises(ValueError, match="double"):
            rtcnet.network.grad_check(model, batch, batch[:, :1])

    def test_loss_decreases_under_plain_gradient_descent(self):
        model = build(TINY, seed=0, dtype=np.float64)
        batch = random_tensor((2, 3, 16, 16), seed=3)
        target = target_for(batch, 3)
        losses = []
        for _ in range(10):
            loss, grads = rtcnet.network.backward(model, batch, target)
            losses.append(loss)
            for key, grad in grads.items():
                model.params[key] -= 0.05 * grad
        assert losses[-1] < losses[0]
