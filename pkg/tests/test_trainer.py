import rtcnet.network
import rtcnet.trainer
from rtcnet.structure import TrainConfig
from rtcnet.trainer import DivergenceError, OptimizerState, epoch_order, sgd_step, train

from conftest import REDUCED, TINY, blob_dataset

import numpy as np
import pytest

def one_param(value: float, key: str = "layer.bias") -> dict:
    return {key: np.array([value])}

@pytest.fixture
def tiny_blobs():
    return blob_dataset(count=6, size=16, cell=8)

class TestSgdStep:
    def test_first_step(self):
        params = one_param(1.0)
        state = sgd_step(params, one_param(1.0), OptimizerState.zeros_like(params),
                         TrainConfig(learning_rate=0.1, momentum=0.9, l2=0.0))
        assert params["layer.bias"][0] == pytest.approx(0.9)
        assert state.velocities["layer.bias"][0] == pytest.approx(-0.1)
        assert state.step == 1

    def test_momentum_carries_over(self):
        params = one_param(1.0)
        config = TrainConfig(learning_rate=0.1, momentum=0.9, l2=0.0)
        state = OptimizerState.zeros_like(params)
        for _ in range(2):
            state = sgd_step(params, one_param(1.0), state, config)
        assert state.velocities["layer.bias"][0] == pytest.approx(-0.19)
        assert params["layer.bias"][0] == pytest.approx(0.71)

    def test_weight_decay_on_kernels_only(self):
        params = {"conv.kernel": np.array([2.0]), "conv.bias": np.array([2.0])}
        zero = {key: np.zeros(1) for key in params}
        config = TrainConfig(learning_rate=0.1, momentum=0.0, l2=0.5)
        state = OptimizerState.zeros_like(params)
        for _ in range(5):
            state = sgd_step(params, zero, state, config)
        assert params["conv.kernel"][0] == pytest.approx(2.0 * (1 - 0.1 * 0.5) ** 5)
        assert params["conv.bias"][0] == 2.0

    def test_zero_learning_rate_is_a_no_op(self):
        params = {"conv.kernel": np.array([0.3, -1.2]), "conv.bias": np.array([0.7])}
        before = {key: value.copy() for key, value in params.items()}
        grads = {"conv.kernel": np.array([5.0, -3.0]), "conv.bias": np.array([1.0])}
        sgd_step(params, grads, OptimizerState.zeros_like(params), TrainConfig(learning_rate=0.0))
        for key in params:
            np.testing.assert_array_equal(params[key], before[key])

    def test_misaligned_gradients(self):
        params = {"a.kernel": np.zeros(2), "a.bias": np.zeros(1)}
        with pytest.raises(ValueError, match="aligned"):
            sgd_step(params, {"a.kernel": np.zeros(2)}, OptimizerState.zeros_like(params), TrainConfig())

    def test_misshaped_gradient(self):
        params = {"a.kernel": np.zeros(2)}
        with pytest.raises(ValueError, match="shape"):
            sgd_step(params, {"a.kernel": np.zeros(3)}, OptimizerState.zeros_like(params), TrainConfig())


class TestTrainConfig:
    @pytest.mark.parametrize("kwargs", [{"learning_rate": -1e-4}, {"batch_size": 0}, {"epochs": 0},
                                        {"momentum": 1.0}, {"l2": -1.0}, {"class_weights": (1.0,)},
                                        {"checkpoint_every": 0}, {"checkpoint_every": -5}])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


def test_epoch_order_is_a_seeded_permutation():
    order = epoch_order(10, seed=4, epoch=2)
    assert sorted(order) == list(range(10))
    np.testing.assert_array_equal(order, epoch_order(10, seed=4, epoch=2))
    assert not np.array_equal(order, epoch_order(10, seed=4, epoch=3))


class TestTrain:
    def test_zero_learning_rate_keeps_weights(self, tiny_blobs):
        model = rtcnet.network.build(TINY, seed=0)
        before = {key: value.copy() for key, value in model.params.items()}
        trained, history = train(model, tiny_blobs, TrainConfig(learning_rate=0.0, epochs=2, batch_size=4))
        for key, value in trained.params.items():
            np.testing.assert_array_equal(value, before[key])
        assert len(history) == 2
        assert history.loss[0] == pytest.approx(history.loss[1])

    def test_deterministic_in_double(self, tiny_blobs):
        config = TrainConfig(learning_rate=1e-2, epochs=2, batch_size=4, seed=5)
        first, _ = train(rtcnet.network.build(TINY, seed=1, dtype=np.float64), tiny_blobs, config)
        second, _ = train(rtcnet.network.build(TINY, seed=1, dtype=np.float64), tiny_blobs, config)
        for key in first.params:
            np.testing.assert_array_equal(first.params[key], second.params[key])

    def test_single_precision_loss_curves_agree(self, tiny_blobs):
        config = TrainConfig(learning_rate=1e-2, epochs=3, batch_size=4, seed=5)
        _, first = train(rtcnet.network.build(TINY, seed=1), tiny_blobs, config)
        _, second = train(rtcnet.network.build(TINY, seed=1), tiny_blobs, config)
        np.testing.assert_allclose(second.loss, first.loss, rtol=1e-5)
        np.testing.assert_allclose(second.pixel_accuracy, first.pixel_accuracy, rtol=1e-5)

    def test_resume_matches_uninterrupted_run(self, tiny_blobs, tmp_path):
        config = TrainConfig(learning_rate=1e-2, epochs=4, batch_size=4, checkpoint_every=2, seed=2)
        full, _ = train(rtcnet.network.build(TINY, seed=1, dtype=np.float64), tiny_blobs, config, tmp_path / "full")
        assert sorted(p.name for p in (tmp_path / "full" / "checkpoints").iterdir()) == ["epoch-002.rtcn", "epoch-004.rtcn"]

        resumed, history = train(rtcnet.network.build(TINY, seed=99, dtype=np.float64), tiny_blobs, config,
                                 tmp_path / "resumed", resume=tmp_path / "full" / "checkpoints" / "epoch-002.rtcn")
        assert len(history) == 2
        for key in full.params:
            np.testing.assert_array_equal(resumed.params[key], full.params[key])
        final = rtcnet.network.load_weights(tmp_path / "resumed" / "final.rtcn")
        np.testing.assert_array_equal(final.params["classifier.kernel"], full.params["classifier.kernel"])

    def test_writes_one_log_line_per_epoch(self, tiny_blobs, tmp_path):
        train(rtcnet.network.build(TINY, seed=0), tiny_blobs, TrainConfig(epochs=3, batch_size=4), tmp_path)
        lines = (tmp_path / "train.log").read_text().splitlines()
        assert len(lines) == 3
        for epoch, line in enumerate(lines, start=1):
            fields = line.split("\t")
            assert len(fields) == 4 and int(fields[0]) == epoch
            assert 0.0 <= float(fields[2]) <= 1.0
        assert (tmp_path / "final.rtcn").exists()

    def test_rejects_wrongly_sized_samples(self):
        with pytest.raises(ValueError, match="resize"):
            train(rtcnet.network.build(TINY, seed=0), blob_dataset(count=2, size=32), TrainConfig(epochs=1))

    def test_rejects_empty_dataset(self):
        with pytest.raises(ValueError, match="empty"):
            train(rtcnet.network.build(TINY, seed=0), [], TrainConfig(epochs=1))

    def test_divergence_points_at_last_checkpoint(self, tiny_blobs, tmp_path, monkeypatch):
        real = rtcnet.network.loss_and_gradients
        calls = []

        def failing(model, images, masks, class_weights):
            calls.append(1)
            loss, grads, logits = real(model, images, masks, class_weights)
            return (float("nan") if len(calls) == 3 else loss), grads, logits

        monkeypatch.setattr(rtcnet.network, "loss_and_gradients", failing)
        config = TrainConfig(epochs=3, batch_size=4, checkpoint_every=1)
        with pytest.raises(DivergenceError, match="epoch 2, batch 1") as info:
            train(rtcnet.network.build(TINY, seed=0), tiny_blobs, config, tmp_path)
        assert info.value.checkpoint == tmp_path / "checkpoints" / "epoch-001.rtcn"
        assert info.value.checkpoint.exists()
        assert not (tmp_path / "final.rtcn").exists()

    def test_divergence_after_resume_points_at_resume_file(self, tiny_blobs, tmp_path, monkeypatch):
        first = TrainConfig(epochs=1, batch_size=4, seed=3)
        train(rtcnet.network.build(TINY, seed=0), tiny_blobs, first, tmp_path / "first")
        resume = tmp_path / "first" / "checkpoints" / "epoch-001.rtcn"

        real = rtcnet.network.loss_and_gradients

        def failing(model, images, masks, class_weights):
            loss, grads, logits = real(model, images, masks, class_weights)
            return float("inf"), grads, logits

        monkeypatch.setattr(rtcnet.network, "loss_and_gradients", failing)
        with pytest.raises(DivergenceError, match="epoch 2, batch 1") as info:
            train(rtcnet.network.build(TINY, seed=0), tiny_blobs, TrainConfig(epochs=3, batch_size=4, seed=3),
                  tmp_path / "second", resume=resume)
        assert info.value.checkpoint == resume

    def test_non_finite_weights_diverge(self, tiny_blobs):
        model = rtcnet.network.build(TINY, seed=0)
        model.params["classifier.bias"][0] = np.inf
        with pytest.raises(DivergenceError) as info:
            train(model, tiny_blobs, TrainConfig(epochs=1))
        assert info.value.checkpoint is None

    def test_overfits_blobs(self):
        # 8 samples, batch 4, 100 epochs: 200 iterations. Under the per-pixel mean loss 1e-3 stalls
        # on the all-background prediction for the whole budget.
        blobs = blob_dataset(count=8, size=64)
        config = TrainConfig(learning_rate=5e-2, batch_size=4, epochs=100, seed=0)
        model, history = train(rtcnet.network.build(REDUCED, seed=0), blobs, config)
        assert history.loss[-1] < history.loss[0]
        assert history.loss[-1] <= history.loss[1]
        images = np.concatenate([sample.image for sample in blobs])
        masks = np.concatenate([sample.mask for sample in blobs])
        assert rtcnet.network.pixel_accuracy(rtcnet.network.forward(model, images), masks) > 0.99
