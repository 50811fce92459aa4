from __future__ import annotations

import rtcnet.logger
import rtcnet.network
import rtcnet.toolbox
from rtcnet.structure import FundusSample, TrainConfig
from rtcnet.tensor import NonFiniteError

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import MutableMapping, Sequence
import logging
import time

import numpy as np

logger = logging.getLogger("rtcnet.trainer")

class DivergenceError(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None) -> None:
        self.checkpoint = checkpoint
        super().__init__(message)

@dataclass
class OptimizerState:
    velocities: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MutableMapping[str, np.ndarray]) -> OptimizerState:
        return cls({key: np.zeros_like(value) for key, value in params.items()})

@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    pixel_accuracy: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, loss: float, accuracy: float, seconds: float) -> None:
        self.loss.append(loss)
        self.pixel_accuracy.append(accuracy)
        self.seconds.append(seconds)

    def __len__(self) -> int:
        return len(self.loss)

    def to_tsv(self) -> str:
        lines = ["epoch\tmean_loss\tpixel_acc\tseconds"]
        for epoch, (loss, acc, sec) in enumerate(zip(self.loss, self.pixel_accuracy, self.seconds), start=1):
            lines.append(epoch_line(epoch, loss, acc, sec))
        return "\n".join(lines) + "\n"

def epoch_line(epoch: int, loss: float, accuracy: float, seconds: float) -> str:
    return f"{epoch}\t{loss:.8f}\t{accuracy:.6f}\t{seconds:.3f}"

def is_decayed(name: str) -> bool:
    """L2 applies to kernels only, never to biases."""
    return name.endswith(".kernel")

def sgd_step(params: MutableMapping[str, np.ndarray], gradients: dict[str, np.ndarray],
             state: OptimizerState, config: TrainConfig) -> OptimizerState:
    """
    Momentum SGD with L2 weight decay, in place on params.

    v <- momentum * v - lr * (g + l2 * w)    (l2 term on kernels only)
    w <- w + v

    Args:
        params: Model parameters (a Model's .params)
        gradients (dict): Gradients with the same keys and shapes
        state (OptimizerState): Velocities
        config (TrainConfig): Hyperparameters
    Returns:
        OptimizerState: Updated state
    """
    if list(gradients) != list(params):
        raise ValueError(f"gradient set is not aligned with parameters "
                         f"({len(gradients)} gradients for {len(params)} parameters)")
    for key, weight in params.items():
        grad = gradients[key]
        if grad.shape != weight.shape:
            raise ValueError(f"gradient for {key} has shape {grad.shape}, parameter has {weight.shape}")
        if is_decayed(key) and config.l2:
            grad = grad + config.l2 * weight
        velocity = config.momentum * state.velocities[key] - config.learning_rate * grad
        state.velocities[key] = velocity.astype(weight.dtype)
        weight += state.velocities[key]
    state.step += 1
    return state

def _assemble(samples: Sequence[FundusSample], indices: np.ndarray, dtype) -> tuple[np.ndarray, np.ndarray]:
    images = np.concatenate([samples[k].image for k in indices]).astype(dtype)
    masks = np.concatenate([samples[k].mask for k in indices]).astype(dtype)
    return images, masks

def epoch_order(size: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle of range(size) for one epoch, derived from (seed, epoch) so resumed runs replay it."""
    return np.random.default_rng([seed, epoch]).permutation(size)

def _check_dataset(model: rtcnet.network.Model, dataset: Sequence[FundusSample]) -> None:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    config = model.config
    for sample in dataset:
        if sample.image.shape[1:] != (config.channels, config.height, config.width):
            raise ValueError(f"sample {sample.id} has shape {sample.image.shape[1:]}, model expects "
                             f"{(config.channels, config.height, config.width)}; resize inputs first")

def train(model: rtcnet.network.Model, dataset: Sequence[FundusSample], config: TrainConfig,
          out_dir: Path = None, resume: Path = None) -> tuple[rtcnet.network.Model, TrainHistory]:
    """
    Mini-batch momentum SGD.

    Args:
        model (rtcnet.network.Model): Initial model (ignored when resuming)
        dataset (Sequence[FundusSample]): Training samples at network input size
        config (TrainConfig): Hyperparameters
        out_dir (Path): Where checkpoints and train.log go; nothing is written when None
        resume (Path): Checkpoint to continue from
    Returns:
        tuple: (trained model, history of the epochs run by this call)
    """
    state = OptimizerState.zeros_like(model.params)
    start_epoch = 0
    if resume is not None:
        model, velocities, meta = rtcnet.network.load_checkpoint(resume)
        state = OptimizerState(velocities, int(meta.get("step", 0)))
        start_epoch = int(meta["epoch"])
        logger.info(f"resuming from {resume} after epoch {start_epoch}")
    _check_dataset(model, dataset)

    out_dir = Path(out_dir) if out_dir is not None else None
    runlog = rtcnet.logger.create_logger("train", out_dir / "train.log") if out_dir else None
    last_good = Path(resume) if resume is not None else None
    history = TrainHistory()
    dtype = model.dtype

    def checkpoint(name: str, epoch: int) -> Path:
        path = out_dir / "checkpoints" / name
        rtcnet.network.save_checkpoint(model, path, state.velocities, {"epoch": epoch, "step": state.step})
        return path

    try:
        with ThreadPoolExecutor(max_workers=1) as pool:
            for epoch in range(start_epoch + 1, config.epochs + 1):
                started = time.perf_counter()
                order = epoch_order(len(dataset), config.seed, epoch)
                batches = [order[k:k + config.batch_size] for k in range(0, len(order), config.batch_size)]
                total_loss, correct, pixels = 0.0, 0.0, 0

                upcoming = pool.submit(_assemble, dataset, batches[0], dtype)
                for k in range(len(batches)):
                    images, masks = upcoming.result()
                    if k + 1 < len(batches):
                        upcoming = pool.submit(_assemble, dataset, batches[k + 1], dtype)

                    try:
                        loss, grads, logits = rtcnet.network.loss_and_gradients(model, images, masks, config.class_weights)
                    except NonFiniteError as exc:
                        raise DivergenceError(f"{exc} at epoch {epoch}, batch {k + 1}", last_good) from None
                    if not np.isfinite(loss):
                        raise DivergenceError(f"loss became {loss} at epoch {epoch}, batch {k + 1}", last_good)
                    sgd_step(model.params, grads, state, config)
                    if not all(np.isfinite(value).all() for value in model.params.values()):
                        raise DivergenceError(f"weights became non-finite at epoch {epoch}, batch {k + 1}", last_good)

                    total_loss += loss * len(images)
                    correct += rtcnet.network.pixel_accuracy(logits, masks) * masks.size
                    pixels += masks.size

                seconds = time.perf_counter() - started
                history.append(total_loss / len(dataset), correct / pixels, seconds)
                logger.info(f"epoch {epoch}/{config.epochs} loss {history.loss[-1]:.6f} "
                            f"pixel acc {history.pixel_accuracy[-1]:.4f} ({rtcnet.toolbox.format_seconds(seconds)})")
                if runlog:
                    runlog.info(epoch_line(epoch, history.loss[-1], history.pixel_accuracy[-1], seconds))
                if out_dir and (epoch % config.checkpoint_every == 0 or epoch == config.epochs):
                    last_good = checkpoint(f"epoch-{epoch:03d}.rtcn", epoch)
        if out_dir:
            rtcnet.network.save_weights(model, out_dir / "final.rtcn")
    except DivergenceError as exc:
        logger.error(f"training diverged: {exc}; last good checkpoint: {exc.checkpoint}")
        raise
    finally:
        if runlog:
            rtcnet.logger.close_logger(runlog)
    return model, history