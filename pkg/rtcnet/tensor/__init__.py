from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence
import logging

import numpy as np

logger = logging.getLogger("rtcnet.tensor")

DOUBLE = np.float64

class ShapeError(ValueError):
    pass

class NonFiniteError(FloatingPointError):
    pass

class NoBackwardError(KeyError):
    pass

def _require_rank4(tensor: np.ndarray, name: str) -> None:
    if np.ndim(tensor) != 4:
        raise ShapeError(f"{name} must be a rank-4 (n, c, h, w) tensor, got shape {np.shape(tensor)}")

def _check_finite(tensor: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(tensor).all():
        raise NonFiniteError(f"{where} produced non-finite values")
    return tensor

def _pad(tensor: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return tensor
    return np.pad(tensor, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

@dataclass(frozen=True, eq=False)
class ConvSpec:
    """
    Learnable convolution parameters.

    For conv2d the kernel is (out_channels, in_channels, kh, kw). A transposed
    convolution is the adjoint of the conv2d holding the same kernel, so it reads
    the kernel as (in_channels, out_channels, kh, kw); its bias has kernel.shape[1] entries.
    bias None means no bias term.
    """
    kernel: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        if np.ndim(self.kernel) != 4:
            raise ShapeError(f"kernel must be rank 4, got shape {np.shape(self.kernel)}")
        if self.bias is not None and np.ndim(self.bias) != 1:
            raise ShapeError(f"bias must be rank 1, got shape {np.shape(self.bias)}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"need stride >= 1 and padding >= 0, got stride={self.stride} padding={self.padding}")

    def output_dims(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel.shape[2:]
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        if h + 2 * self.padding < kh or w + 2 * self.padding < kw or ho <= 0 or wo <= 0:
            raise ShapeError(f"conv with kernel {self.kernel.shape} stride {self.stride} padding {self.padding} "
                             f"gives non-positive output for input {h}x{w}")
        return ho, wo

    def transposed_output_dims(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel.shape[2:]
        ho = (h - 1) * self.stride - 2 * self.padding + kh
        wo = (w - 1) * self.stride - 2 * self.padding + kw
        if ho <= 0 or wo <= 0:
            raise ShapeError(f"transposed conv with kernel {self.kernel.shape} stride {self.stride} "
                             f"padding {self.padding} gives non-positive output for input {h}x{w}")
        return ho, wo

    def without_bias(self) -> ConvSpec:
        return ConvSpec(self.kernel, None, self.stride, self.padding)

def _strided(tensor: np.ndarray, i: int, j: int, stride: int, rows: int, cols: int) -> np.ndarray:
    return tensor[:, :, i:i + stride * (rows - 1) + 1:stride, j:j + stride * (cols - 1) + 1:stride]

def _kernel_grad(padded: np.ndarray, grad_out: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # grad[o, c, i, j] = sum over n, y, x of grad_out[n, o, y, x] * padded[n, c, y*s + i, x*s + j]
    rows, cols = grad_out.shape[2:]
    grad = np.empty((grad_out.shape[1], padded.shape[1], kh, kw), dtype=np.result_type(padded, grad_out))
    for i in range(kh):
        for j in range(kw):
            window = _strided(padded, i, j, stride, rows, cols)
            grad[:, :, i, j] = np.tensordot(grad_out, window, axes=([0, 2, 3], [0, 2, 3]))
    return grad

def _scatter(values: np.ndarray, kernel: np.ndarray, full_shape: tuple, stride: int) -> np.ndarray:
    # Scatter-accumulate values (n, a, y, x) through kernel (a, b, kh, kw) into a (n, b, H, W) canvas.
    rows, cols = values.shape[2:]
    canvas = np.zeros(full_shape, dtype=np.result_type(values, kernel))
    for i in range(kernel.shape[2]):
        for j in range(kernel.shape[3]):
            contribution = np.tensordot(values, kernel[:, :, i, j], axes=([1], [0]))
            _strided(canvas, i, j, stride, rows, cols)[...] += contribution.transpose(0, 3, 1, 2)
    return canvas

def conv2d_forward(input: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """
    2-D cross-correlation over zero-padded input.

    Args:
        input (np.ndarray): (n, in_channels, h, w)
        spec (ConvSpec): kernel (out_channels, in_channels, kh, kw), bias, stride, padding
    Returns:
        np.ndarray: (n, out_channels, h', w') with h' = floor((h + 2p - kh) / s) + 1
    """
    _require_rank4(input, "input")
    cout, cin, kh, kw = spec.kernel.shape
    if input.shape[1] != cin:
        raise ShapeError(f"input shape {input.shape} does not match kernel shape {spec.kernel.shape}: "
                         f"{input.shape[1]} channels given, {cin} expected")
    n, _, h, w = input.shape
    ho, wo = spec.output_dims(h, w)
    padded = _pad(input, spec.padding)

    out = np.zeros((n, cout, ho, wo), dtype=np.result_type(input, spec.kernel))
    for i in range(kh):
        for j in range(kw):
            window = _strided(padded, i, j, spec.stride, ho, wo)
            out += np.tensordot(window, spec.kernel[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    if spec.bias is not None:
        if spec.bias.shape != (cout,):
            raise ShapeError(f"bias shape {spec.bias.shape} does not match {cout} output channels")
        out += spec.bias[None, :, None, None]
    return _check_finite(out, "conv2d_forward")

def conv2d_backward(input: np.ndarray, spec: ConvSpec, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of sum(grad_out * conv2d_forward(input, spec)).

    Returns:
        tuple: (grad_input, grad_kernel, grad_bias) shaped like input, kernel and bias
    """
    _require_rank4(input, "input")
    _require_rank4(grad_out, "grad_out")
    cout, cin, kh, kw = spec.kernel.shape
    if input.shape[1] != cin:
        raise ShapeError(f"input shape {input.shape} does not match kernel shape {spec.kernel.shape}")
    n, _, h, w = input.shape
    expected = (n, cout) + spec.output_dims(h, w)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output shape {expected}")

    padded = _pad(input, spec.padding)
    grad_kernel = _kernel_grad(padded, grad_out, kh, kw, spec.stride)
    grad_padded = _scatter(grad_out, spec.kernel, padded.shape, spec.stride)
    p = spec.padding
    grad_input = np.ascontiguousarray(grad_padded[:, :, p:p + h, p:p + w])
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_input, grad_kernel, grad_bias

def transposed_conv2d_forward(input: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """
    Learnable upsampling: the adjoint of conv2d with the same kernel, plus bias.

    Output dims are (h - 1) * stride - 2 * padding + kh (resp. w).
    """
    _require_rank4(input, "input")
    cin, cout, kh, kw = spec.kernel.shape
    if input.shape[1] != cin:
        raise ShapeError(f"input shape {input.shape} does not match transposed kernel shape {spec.kernel.shape}: "
                         f"{input.shape[1]} channels given, {cin} expected")
    n, _, h, w = input.shape
    ho, wo = spec.transposed_output_dims(h, w)
    full = _scatter(input, spec.kernel, (n, cout, (h - 1) * spec.stride + kh, (w - 1) * spec.stride + kw), spec.stride)
    p = spec.padding
    out = np.ascontiguousarray(full[:, :, p:p + ho, p:p + wo])
    if spec.bias is not None:
        if spec.bias.shape != (cout,):
            raise ShapeError(f"bias shape {spec.bias.shape} does not match {cout} output channels")
        out += spec.bias[None, :, None, None]
    return _check_finite(out, "transposed_conv2d_forward")

def transposed_conv2d_backward(input: np.ndarray, spec: ConvSpec, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of sum(grad_out * transposed_conv2d_forward(input, spec)).

    grad_input is conv2d_forward of grad_out with the same kernel.
    """
    _require_rank4(input, "input")
    _require_rank4(grad_out, "grad_out")
    cin, cout, kh, kw = spec.kernel.shape
    if input.shape[1] != cin:
        raise ShapeError(f"input shape {input.shape} does not match transposed kernel shape {spec.kernel.shape}")
    n, _, h, w = input.shape
    expected = (n, cout) + spec.transposed_output_dims(h, w)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output shape {expected}")

    grad_input = conv2d_forward(grad_out, spec.without_bias())
    grad_kernel = _kernel_grad(_pad(grad_out, spec.padding), input, kh, kw, spec.stride)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_input, grad_kernel, grad_bias

@dataclass(frozen=True, eq=False)
class PoolIndices:
    """Flat (row * w + col) index of each pooled maximum inside the pre-pool (h, w) plane."""
    indices: np.ndarray
    input_shape: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        n, c, h, w = self.input_shape
        if self.indices.shape != (n, c, h // 2, w // 2):
            raise ShapeError(f"indices shape {self.indices.shape} does not mirror pooled shape of {self.input_shape}")

def maxpool2x2(input: np.ndarray) -> tuple[np.ndarray, PoolIndices]:
    """
    2x2 max-pool with stride 2. Ties go to the lowest flat index of the window.
    """
    _require_rank4(input, "input")
    n, c, h, w = input.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}; pad or resize inputs upstream "
                         f"(network inputs must be multiples of 16)")
    windows = input.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    local = windows.argmax(axis=-1)
    pooled = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(local, 2)
    rows = 2 * np.arange(h // 2)[:, None] + di
    cols = 2 * np.arange(w // 2)[None, :] + dj
    return np.ascontiguousarray(pooled), PoolIndices((rows * w + cols).astype(np.int64), input.shape)

def maxunpool2x2(input: np.ndarray, indices: PoolIndices, out_shape: tuple = None) -> np.ndarray:
    """
    Scatter pooled values back to their recorded argmax positions; zeros elsewhere.
    """
    _require_rank4(input, "input")
    out_shape = tuple(out_shape or indices.input_shape)
    if input.shape != indices.indices.shape or out_shape[:2] != input.shape[:2]:
        raise ShapeError(f"unpool input {input.shape} does not match indices {indices.indices.shape} / output {out_shape}")
    if out_shape[2:] != tuple(indices.input_shape[2:]):
        raise ShapeError(f"unpool output plane {out_shape[2:]} differs from the pooled plane {tuple(indices.input_shape[2:])} "
                         f"the indices were recorded on")
    n, c, h, w = out_shape
    out = np.zeros((n, c, h * w), dtype=input.dtype)
    np.put_along_axis(out, indices.indices.reshape(n, c, -1), input.reshape(n, c, -1), axis=2)
    return out.reshape(out_shape)

def maxpool2x2_backward(indices: PoolIndices, grad_out: np.ndarray) -> np.ndarray:
    return maxunpool2x2(grad_out, indices, indices.input_shape)

def maxunpool2x2_backward(indices: PoolIndices, grad_out: np.ndarray) -> np.ndarray:
    n, c = grad_out.shape[:2]
    gathered = np.take_along_axis(grad_out.reshape(n, c, -1), indices.indices.reshape(n, c, -1), axis=2)
    return gathered.reshape(indices.indices.shape)

def relu(input: np.ndarray) -> np.ndarray:
    return np.maximum(input, 0)

def relu_backward(input: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Subgradient at 0 is 0."""
    if input.shape != grad_out.shape:
        raise ShapeError(f"relu input {input.shape} and grad_out {grad_out.shape} differ")
    return grad_out * (input > 0)

def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"add needs identical shapes, got {np.shape(a)} and {np.shape(b)}")
    return _check_finite(a + b, "add")

def softmax_cross_entropy(logits: np.ndarray, target: np.ndarray, class_weights=(1.0, 1.0)) -> tuple[float, np.ndarray]:
    """
    Weighted mean over all pixels of -log softmax(logits)[target].

    Args:
        logits (np.ndarray): (n, 2, h, w)
        target (np.ndarray): (n, 1, h, w) with values in {0, 1}
        class_weights: per-class weight pair
    Returns:
        tuple: (loss, grad_logits) where grad_logits = (softmax - one_hot) * weight / pixel_count
    """
    _require_rank4(logits, "logits")
    _require_rank4(target, "target")
    n, classes, h, w = logits.shape
    if classes != 2:
        raise ShapeError(f"softmax_cross_entropy expects 2 logit channels, got {classes}")
    if target.shape != (n, 1, h, w):
        raise ShapeError(f"target shape {target.shape} does not match logits shape {logits.shape}")
    if not np.isin(target, (0, 1)).all():
        raise ValueError("target values must be in {0, 1}")

    # Accumulate in double even for single-precision logits.
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    labels = target.astype(np.intp)
    weights = np.asarray(class_weights, dtype=np.float64)[labels[:, 0]]
    pixels = n * h * w

    picked = np.take_along_axis(logp, labels, axis=1)[:, 0]
    loss = float(-(weights * picked).sum() / pixels) + 0.0

    grad = np.exp(logp)
    grad -= np.arange(classes)[None, :, None, None] == labels
    grad *= weights[:, None] / pixels
    return loss, _check_finite(grad.astype(logits.dtype), "softmax_cross_entropy")

@dataclass(frozen=True)
class Differentiable:
    """A kernel with a registered backward, in the array-only form grad_check drives."""
    name: str
    forward: Callable
    backward: Callable
    wrt: tuple[int, ...]
    kernels: tuple = field(default=())

operations: dict[str, Differentiable] = {}

def register(name: str, forward: Callable, backward: Callable, wrt: tuple[int, ...], kernels: tuple = ()) -> Differentiable:
    """
    Register a differentiable op.
    Args:
        name (str): Registry key
        forward (Callable): (*inputs, **params) -> array or scalar
        backward (Callable): (inputs, grad_out, **params) -> gradients for the inputs listed in wrt
        wrt (tuple): Indices of differentiable inputs
        kernels (tuple): Public kernel functions this entry stands for
    Returns:
        Differentiable: Registered op
    """
    op = Differentiable(name, forward, backward, tuple(wrt), tuple(kernels))
    operations[name] = op
    return op

def _conv_forward(x, kernel, bias, stride=1, padding=0):
    return conv2d_forward(x, ConvSpec(kernel, bias, stride, padding))

def _conv_backward(inputs, grad_out, stride=1, padding=0):
    x, kernel, bias = inputs
    return conv2d_backward(x, ConvSpec(kernel, bias, stride, padding), grad_out)

def _tconv_forward(x, kernel, bias, stride=2, padding=1):
    return transposed_conv2d_forward(x, ConvSpec(kernel, bias, stride, padding))

def _tconv_backward(inputs, grad_out, stride=2, padding=1):
    x, kernel, bias = inputs
    return transposed_conv2d_backward(x, ConvSpec(kernel, bias, stride, padding), grad_out)

def _pool_backward(inputs, grad_out):
    _, indices = maxpool2x2(inputs[0])
    return (maxpool2x2_backward(indices, grad_out),)

def _unpool_backward(inputs, grad_out, indices):
    return (maxunpool2x2_backward(indices, grad_out),)

def _ce_forward(logits, target, class_weights=(1.0, 1.0)):
    return softmax_cross_entropy(logits, target, class_weights)[0]

def _ce_backward(inputs, grad_out, class_weights=(1.0, 1.0)):
    _, grad = softmax_cross_entropy(inputs[0], inputs[1], class_weights)
    return (grad * grad_out,)

register("conv2d", _conv_forward, _conv_backward, (0, 1, 2), (conv2d_forward, conv2d_backward))
register("transposed_conv2d", _tconv_forward, _tconv_backward, (0, 1, 2), (transposed_conv2d_forward, transposed_conv2d_backward))
register("maxpool2x2", lambda x: maxpool2x2(x)[0], _pool_backward, (0,), (maxpool2x2,))
register("maxunpool2x2", lambda x, indices: maxunpool2x2(x, indices), _unpool_backward, (0,), (maxunpool2x2,))
register("relu", relu, lambda inputs, g: (relu_backward(inputs[0], g),), (0,), (relu, relu_backward))
register("add", add, lambda inputs, g: (g, g), (0, 1), (add,))
register("softmax_cross_entropy", _ce_forward, _ce_backward, (0,), (softmax_cross_entropy,))

def lookup(op_handle) -> Differentiable:
    if isinstance(op_handle, Differentiable):
        return op_handle
    if isinstance(op_handle, str) and op_handle in operations:
        return operations[op_handle]
    for op in operations.values():
        if op_handle in op.kernels:
            return op
    raise NoBackwardError(f"no backward registered for {getattr(op_handle, '__name__', op_handle)!r}")

def random_tensor(shape: tuple, seed: int, avoid_kink: float = None, dtype=DOUBLE) -> np.ndarray:
    """
    Standard normal sample; with avoid_kink=eps every |x| <= 2*eps is pushed out to 4*eps.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    if avoid_kink is not None:
        near = np.abs(x) <= 2 * avoid_kink
        x[near] = np.where(x[near] < 0, -4 * avoid_kink, 4 * avoid_kink)
    return x.astype(dtype)

def compare_gradients(
    evaluate: Callable[[], np.ndarray],
    arrays: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    eps: float,
    rng: np.random.Generator = None,
    max_coords: int = None,
    kink_tolerance: float = None,
    min_magnitude: float = 0.0,
) -> float:
    """
    Max relative error between analytic gradients and central differences.

    evaluate() reads the (mutated in place) arrays and returns the objective, either
    a scalar or an array whose sum is the objective. Differences are taken elementwise
    before summing so unchanged outputs cancel exactly.

    Args:
        evaluate (Callable): Objective evaluation
        arrays (Sequence): Arrays to perturb, in place
        analytic (Sequence): Analytic gradient per array
        eps (float): Perturbation size
        rng (np.random.Generator): Used to sample coordinates when max_coords is set
        max_coords (int): Coordinates sampled per array, all when None
        kink_tolerance (float): Skip coordinates whose one-sided slopes disagree by more than this (relative)
        min_magnitude (float): Skip coordinates whose analytic gradient is smaller than this
    Returns:
        float: max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    """
    worst = 0.0
    center = np.asarray(evaluate(), dtype=np.float64) if kink_tolerance is not None else None
    for array, grad in zip(arrays, analytic):
        if np.shape(grad) != np.shape(array):
            raise ShapeError(f"analytic gradient shape {np.shape(grad)} does not match {np.shape(array)}")
        coords = list(np.ndindex(array.shape))
        if max_coords is not None and len(coords) > max_coords:
            coords = [coords[k] for k in rng.choice(len(coords), size=max_coords, replace=False)]
        for pos in coords:
            a = float(grad[pos])
            if abs(a) < min_magnitude:
                continue
            orig = array[pos]
            up, down = orig + eps, orig - eps
            array[pos] = up
            plus = np.asarray(evaluate(), dtype=np.float64)
            array[pos] = down
            minus = np.asarray(evaluate(), dtype=np.float64)
            array[pos] = orig
            if kink_tolerance is not None:
                right = float(np.sum(plus - center)) / float(up - orig)
                left = float(np.sum(center - minus)) / float(orig - down)
                if abs(right - left) > kink_tolerance * max(abs(right), abs(left), 1e-8):
                    continue
            numeric = float(np.sum(plus - minus)) / float(up - down)
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    return worst

def grad_check(op_handle, inputs: Sequence, eps: float = 1e-6, seed: int = 0, **params) -> float:
    """
    Check a registered backward against central finite differences.

    The scalar objective is sum(forward(*inputs) * probe) with a seeded Gaussian probe.

    Args:
        op_handle: Registry name, Differentiable, or public kernel function
        inputs (Sequence): Forward inputs; differentiable ones must be float64
        eps (float): Perturbation in [1e-7, 1e-3]
        seed (int): Probe seed
        params: Non-differentiable keyword arguments of the op (stride, padding, indices, ...)
    Returns:
        float: Max relative error over all coordinates
    """
    op = lookup(op_handle)
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must be in [1e-7, 1e-3], got {eps}")
    inputs = [np.array(x, copy=True) if isinstance(x, np.ndarray) else x for x in inputs]
    for k in op.wrt:
        if not isinstance(inputs[k], np.ndarray) or inputs[k].dtype != DOUBLE:
            raise ValueError(f"grad_check needs double precision inputs, input {k} is "
                             f"{getattr(inputs[k], 'dtype', type(inputs[k]).__name__)}")

    out = op.forward(*inputs, **params)
    probe = np.random.default_rng(seed).standard_normal(np.shape(out))
    analytic = op.backward(inputs, probe, **params)
    error = compare_gradients(
        lambda: np.asarray(op.forward(*inputs, **params)) * probe,
        [inputs[k] for k in op.wrt],
        analytic,
        eps,
    )
    logger.debug(f"grad_check {op.name}: max relative error {error:.3e}")
    return error
