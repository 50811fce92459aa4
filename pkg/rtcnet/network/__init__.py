from __future__ import annotations

import rtcnet.structure
from rtcnet.structure import NetworkConfig
from rtcnet.tensor import (
    ConvSpec,
    ShapeError,
    add,
    compare_gradients,
    conv2d_backward,
    conv2d_forward,
    maxpool2x2,
    maxpool2x2_backward,
    maxunpool2x2,
    maxunpool2x2_backward,
    relu,
    relu_backward,
    softmax_cross_entropy,
    transposed_conv2d_backward,
    transposed_conv2d_forward,
)

from dataclasses import dataclass, field
import logging

import numpy as np

logger = logging.getLogger("rtcnet.network")

UPSAMPLE_KERNEL = 4
UPSAMPLE_STRIDE = 2
UPSAMPLE_PADDING = 1

@dataclass(frozen=True)
class LayerPlan:
    name: str
    kind: str
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False

    @property
    def kernel_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        if self.transposed:
            return (self.in_channels, self.out_channels, k, k)
        return (self.out_channels, self.in_channels, k, k)

    @property
    def param_count(self) -> int:
        return self.kernel_size ** 2 * self.in_channels * self.out_channels + self.out_channels

@dataclass(frozen=True)
class Junction:
    """Convs merged with a skip by addition. skip is the 1x1 projection layer, None for identity."""
    convs: tuple[str, ...]
    skip: str | None

    @property
    def kind(self) -> str:
        return "identity" if self.skip is None else "non-identity"

@dataclass(frozen=True)
class ResidualBlockSpec:
    index: int
    conv_count: int
    in_channels: int
    out_channels: int
    junctions: tuple[Junction, ...]

def residual_blocks(config: NetworkConfig) -> list[ResidualBlockSpec]:
    """
    Encoder wiring. Two-conv blocks carry one junction spanning both convs; three-conv
    blocks carry one junction over the channel-changing first conv and one identity
    junction over the remaining two. A junction gets a 1x1 projection exactly when
    its input and output channel counts differ.
    """
    blocks = []
    cin = config.channels
    for index, (cout, count) in enumerate(zip(config.encoder_channels, config.block_conv_counts), start=1):
        convs = [f"block{index}.conv{k}" for k in range(1, count + 1)]
        groups = [convs] if count == 2 else [convs[:1], convs[1:]]
        junctions = []
        junction_in = cin
        for j, group in enumerate(groups, start=1):
            skip = None if junction_in == cout else f"block{index}.skip{j}"
            junctions.append(Junction(tuple(group), skip))
            junction_in = cout
        blocks.append(ResidualBlockSpec(index, count, cin, cout, tuple(junctions)))
        cin = cout
    return blocks

def layer_plan(config: NetworkConfig) -> list[LayerPlan]:
    """
    Ordered layer table: per block, each junction's convs then its projection;
    then the four decoder stages; then the 1x1 classifier.
    """
    config.validate()
    layers = []
    for block in residual_blocks(config):
        cin = block.in_channels
        for junction in block.junctions:
            junction_in = cin
            for name in junction.convs:
                layers.append(LayerPlan(name, "conv", cin, block.out_channels, 3, 1, 1))
                cin = block.out_channels
            if junction.skip is not None:
                layers.append(LayerPlan(junction.skip, "skip", junction_in, block.out_channels, 1))

    cin = config.encoder_channels[-1]
    for stage, cout in enumerate(config.decoder_channels, start=1):
        if config.upsample_mode == "transposed_conv":
            layers.append(LayerPlan(f"decoder{stage}.up", "upsample", cin, cout,
                                    UPSAMPLE_KERNEL, UPSAMPLE_STRIDE, UPSAMPLE_PADDING, transposed=True))
        else:
            layers.append(LayerPlan(f"decoder{stage}.conv", "unpool_conv", cin, cout, 3, 1, 1))
        cin = cout
    layers.append(LayerPlan("classifier", "classifier", cin, config.num_classes, 1))
    return layers

def config_param_count(config: NetworkConfig) -> int:
    return sum(layer.param_count for layer in layer_plan(config))

class Model:
    """RTC-Net weights. params is ordered like layer_plan: '<layer>.kernel', '<layer>.bias'."""
    config: NetworkConfig
    layers: list[LayerPlan]
    params: dict[str, np.ndarray]

    def __init__(self, config: NetworkConfig, params: dict[str, np.ndarray]) -> None:
        self.config = config
        self.layers = layer_plan(config)
        self._by_name = {layer.name: layer for layer in self.layers}
        expected = {}
        for layer in self.layers:
            expected[f"{layer.name}.kernel"] = layer.kernel_shape
            expected[f"{layer.name}.bias"] = (layer.out_channels,)
        if list(params) != list(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ValueError(f"parameter set does not match the layer plan (missing {missing[:3]}, extra {extra[:3]})")
        for key, shape in expected.items():
            if params[key].shape != shape:
                raise ShapeError(f"{key} has shape {params[key].shape}, plan expects {shape}")
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def spec(self, name: str) -> ConvSpec:
        layer = self._by_name[name]
        return ConvSpec(self.params[f"{name}.kernel"], self.params[f"{name}.bias"], layer.stride, layer.padding)

    def __str__(self) -> str:
        return f"Model({self.config.upsample_mode}, {param_count(self)} parameters)"

def build(config: NetworkConfig, seed: int, dtype=np.float32) -> Model:
    """
    Instantiate RTC-Net with He fan-in normal kernels and zero biases.

    Args:
        config (NetworkConfig): Architecture plan
        seed (int): Initialization seed
        dtype: Parameter precision
    Returns:
        Model: Deterministic in (config, seed)
    """
    rng = np.random.default_rng(seed)
    params = {}
    for layer in layer_plan(config):
        fan_in = layer.in_channels * layer.kernel_size ** 2
        kernel = rng.standard_normal(layer.kernel_shape) * np.sqrt(2.0 / fan_in)
        params[f"{layer.name}.kernel"] = kernel.astype(dtype)
        params[f"{layer.name}.bias"] = np.zeros(layer.out_channels, dtype=dtype)
    model = Model(config, params)
    logger.debug(f"built {model} from seed {seed}")
    return model

def param_count(model: Model) -> int:
    return int(sum(value.size for value in model.params.values()))

@dataclass
class _Trace:
    keep: bool
    shapes: list | None
    encoder: list = field(default_factory=list)
    decoder: list = field(default_factory=list)
    head_input: np.ndarray = None

    def record(self, name: str, tensor: np.ndarray) -> None:
        if self.shapes is not None:
            self.shapes.append((name, tensor.shape))

def _check_batch(model: Model, batch: np.ndarray) -> None:
    config = model.config
    expected = (config.channels, config.height, config.width)
    if np.ndim(batch) != 4 or batch.shape[1:] != expected:
        raise ShapeError(f"batch shape {np.shape(batch)} does not match network input (n,) + {expected}")

def residual_block_forward(model: Model, block: ResidualBlockSpec, x: np.ndarray, trace: _Trace = None):
    """
    One encoder block before its pool: S = relu-conv path + skip, per junction.

    Returns:
        tuple: (block output, per-junction caches for backward)
    """
    trace = trace or _Trace(keep=False, shapes=None)
    junction_caches = []
    for junction in block.junctions:
        convs = []
        h = x
        for name in junction.convs:
            pre = conv2d_forward(h, model.spec(name))
            if trace.keep:
                convs.append((name, h, pre))
            h = relu(pre)
            trace.record(name, h)
        skip = x if junction.skip is None else conv2d_forward(x, model.spec(junction.skip))
        junction_caches.append((junction, x if trace.keep else None, convs))
        x = add(h, skip)
    return x, junction_caches

def _run(model: Model, batch: np.ndarray, trace: _Trace) -> np.ndarray:
    x = batch
    trace.record("input", x)
    for block in residual_blocks(model.config):
        x, junction_caches = residual_block_forward(model, block, x, trace)
        trace.record(f"block{block.index}", x)
        x, indices = maxpool2x2(x)
        trace.record(f"block{block.index}.pool", x)
        trace.encoder.append((junction_caches, indices))

    for stage, layer in enumerate(layer for layer in model.layers if layer.kind in ("upsample", "unpool_conv")):
        if layer.transposed:
            inp, indices = x, None
            pre = transposed_conv2d_forward(inp, model.spec(layer.name))
        else:
            indices = trace.encoder[3 - stage][1]
            inp = maxunpool2x2(x, indices)
            pre = conv2d_forward(inp, model.spec(layer.name))
        if trace.keep:
            trace.decoder.append((layer, inp, pre, indices))
        x = relu(pre)
        trace.record(layer.name, x)

    trace.head_input = x
    logits = conv2d_forward(x, model.spec("classifier"))
    trace.record("classifier", logits)
    return logits

def forward(model: Model, batch: np.ndarray, mode: str = "eval", trace: list = None) -> np.ndarray:
    """
    Run RTC-Net. train and eval modes are identical (no stochastic layers).

    Args:
        model (Model): Network
        batch (np.ndarray): (n, 3, h, w)
        mode (str): "train" or "eval"
        trace (list): When given, (layer name, output shape) pairs are appended
    Returns:
        np.ndarray: logits (n, 2, h, w)
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    _check_batch(model, batch)
    return _run(model, batch, _Trace(keep=False, shapes=trace))

def loss_and_gradients(model: Model, batch: np.ndarray, target: np.ndarray, class_weights=(1.0, 1.0)):
    """
    Forward, softmax loss and backpropagation in one pass.

    Returns:
        tuple: (loss, gradients ordered like model.params, logits)
    """
    _check_batch(model, batch)
    trace = _Trace(keep=True, shapes=None)
    logits = _run(model, batch, trace)
    loss, g = softmax_cross_entropy(logits, target, class_weights)

    grads = {}

    def store(name, grad_kernel, grad_bias):
        grads[f"{name}.kernel"] = grad_kernel
        grads[f"{name}.bias"] = grad_bias

    g, gk, gb = conv2d_backward(trace.head_input, model.spec("classifier"), g)
    store("classifier", gk, gb)

    for layer, inp, pre, indices in reversed(trace.decoder):
        g = relu_backward(pre, g)
        if layer.transposed:
            g, gk, gb = transposed_conv2d_backward(inp, model.spec(layer.name), g)
        else:
            g, gk, gb = conv2d_backward(inp, model.spec(layer.name), g)
            g = maxunpool2x2_backward(indices, g)
        store(layer.name, gk, gb)

    for junction_caches, indices in reversed(trace.encoder):
        g = maxpool2x2_backward(indices, g)
        for junction, junction_input, convs in reversed(junction_caches):
            g_path = g
            for name, inp, pre in reversed(convs):
                g_path = relu_backward(pre, g_path)
                g_path, gk, gb = conv2d_backward(inp, model.spec(name), g_path)
                store(name, gk, gb)
            if junction.skip is None:
                g_skip = g
            else:
                g_skip, gk, gb = conv2d_backward(junction_input, model.spec(junction.skip), g)
                store(junction.skip, gk, gb)
            g = g_path + g_skip

    return loss, {key: grads[key] for key in model.params}, logits

def backward(model: Model, batch: np.ndarray, target: np.ndarray, class_weights=(1.0, 1.0)) -> tuple[float, dict]:
    """
    Loss and gradients for every learnable tensor.

    Returns:
        tuple: (loss, gradients keyed and ordered like model.params)
    """
    loss, grads, _ = loss_and_gradients(model, batch, target, class_weights)
    return loss, grads

def predict_mask(model: Model, batch: np.ndarray) -> np.ndarray:
    """Binary (n, 1, h, w) uint8 mask, exudate where logit 1 beats logit 0."""
    logits = forward(model, batch, "eval")
    return (logits[:, 1:2] > logits[:, 0:1]).astype(np.uint8)

def pixel_accuracy(logits: np.ndarray, target: np.ndarray) -> float:
    predicted = logits[:, 1:2] > logits[:, 0:1]
    return float((predicted == (target > 0)).mean())

def grad_check(model: Model, batch: np.ndarray, target: np.ndarray, class_weights=(1.0, 1.0),
               eps: float = 1e-6, seed: int = 0, coords_per_tensor: int = 3,
               kink_tolerance: float = 1e-3, min_magnitude: float = 1e-6) -> float:
    """
    End-to-end finite-difference check of backward on a double-precision model.

    A few coordinates per parameter tensor are sampled. Coordinates whose two one-sided
    slopes disagree sit on a ReLU or max-pool switch and are skipped.

    Returns:
        float: Max relative error over the checked coordinates
    """
    if model.dtype != np.float64 or batch.dtype != np.float64:
        raise ValueError("network grad_check needs a double precision model and batch")
    _, grads = backward(model, batch, target, class_weights)
    keys = list(model.params)
    return compare_gradients(
        lambda: softmax_cross_entropy(forward(model, batch), target, class_weights)[0],
        [model.params[key] for key in keys],
        [grads[key] for key in keys],
        eps,
        rng=np.random.default_rng(seed),
        max_coords=coords_per_tensor,
        kink_tolerance=kink_tolerance,
        min_magnitude=min_magnitude,
    )

def shape_chain(config: NetworkConfig) -> list[tuple[str, str, tuple[int, int, int], int]]:
    """
    Analytic layer table.

    Returns:
        list: (name, kind, (h, w, c) output, parameter count) per row
    """
    h, w = config.height, config.width
    rows = [("input", "input", (h, w, config.channels), 0)]
    by_name = {layer.name: layer for layer in layer_plan(config)}
    for block in residual_blocks(config):
        for junction in block.junctions:
            for name in junction.convs:
                rows.append((name, "conv3x3+relu", (h, w, block.out_channels), by_name[name].param_count))
            if junction.skip is not None:
                rows.append((junction.skip, "skip1x1", (h, w, block.out_channels), by_name[junction.skip].param_count))
            rows.append((f"block{block.index}.add", f"add({junction.kind})", (h, w, block.out_channels), 0))
        h, w = h // 2, w // 2
        rows.append((f"block{block.index}.pool", "maxpool2x2", (h, w, block.out_channels), 0))
    for layer in by_name.values():
        if layer.kind == "upsample":
            h, w = 2 * h, 2 * w
            rows.append((layer.name, "tconv4x4/2+relu", (h, w, layer.out_channels), layer.param_count))
        elif layer.kind == "unpool_conv":
            h, w = 2 * h, 2 * w
            rows.append((f"{layer.name[:-5]}.unpool", "maxunpool2x2", (h, w, layer.in_channels), 0))
            rows.append((layer.name, "conv3x3+relu", (h, w, layer.out_channels), layer.param_count))
    head = by_name["classifier"]
    rows.append(("classifier", "conv1x1", (h, w, head.out_channels), head.param_count))
    return rows

from rtcnet.network.weights import (  # noqa: E402
    WeightFileError,
    load_checkpoint,
    load_weights,
    save_checkpoint,
    save_weights,
)
