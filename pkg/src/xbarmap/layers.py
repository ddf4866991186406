"""Layer implementations (numpy, batch-first).

Linear layers come in two flavours with the same interface:

* ``SignedLayer``  -- ordinary full-precision signed weights (baseline)
* ``MappedLayer``  -- weights realized as ``S @ G`` with ``G`` the
  conductances of crossbar cells and ``S`` a fixed periphery matrix

Both quantize their inputs (straight-through) when activation bits are
set. ``Conv2d`` lowers a convolution to a linear layer via im2col.
"""

from __future__ import annotations

import copy

import numpy as np

from .device import (
    AnalogCells,
    CrossbarState,
    DeviceModel,
    RangeTracker,
    quantize_activation,
    sample_variation,
)
from .errors import ForwardStateError, InvalidDimensionError, InvalidInputError
from .periphery import MappingScheme, PeripheryMatrix, recompose


class _Linear:
    """Shared input quantization and forward caching for linear layers."""

    n_in: int
    n_out: int

    def __init__(self, activation_bits: int | None, tracker: RangeTracker | None = None):
        self.activation_bits = activation_bits
        self.tracker = tracker if tracker is not None else RangeTracker()
        self._cache = None
        self.grad = None

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise InvalidDimensionError(f"expected input with {self.n_in} features, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("layer input contains non-finite values")
        return x

    def _quantize_input(self, x: np.ndarray, train: bool):
        if self.activation_bits is None:
            return x, None
        bound = self.tracker.update(x) if train else self.tracker.bound_for(x)
        xq = quantize_activation(x, self.activation_bits, bound)
        # Straight-through: gradient passes inside the clamp range only.
        return xq, np.abs(x) <= bound

    def effective_weight(self) -> np.ndarray:
        raise NotImplementedError

    def forward(self, x, train: bool = False) -> np.ndarray:
        x = self._check_input(x)
        xq, mask = self._quantize_input(x, train)
        w = self.effective_weight()
        self._cache = (xq, mask, w)
        return xq @ w.T

    def _take_cache(self):
        if self._cache is None:
            raise ForwardStateError("backward called without a cached forward pass")
        return self._cache

    @staticmethod
    def _mask_input_grad(dx, mask):
        return dx if mask is None else dx * mask


class SignedLayer(_Linear):
    """Baseline dense layer with unconstrained signed weights."""

    mapping = "baseline"

    def __init__(self, weight, activation_bits: int | None = None,
                 tracker: RangeTracker | None = None):
        super().__init__(activation_bits, tracker)
        self.weight = np.array(weight, dtype=np.float64)
        self.n_out, self.n_in = self.weight.shape

    def effective_weight(self) -> np.ndarray:
        return self.weight

    def backward(self, delta) -> np.ndarray:
        xq, mask, w = self._take_cache()
        delta = np.asarray(delta, dtype=np.float64)
        self.grad = delta.T @ xq
        return self._mask_input_grad(delta @ w, mask)

    def step(self, lr: float) -> None:
        if self.grad is not None:
            self.weight = self.weight - lr * self.grad

    def perturbed(self, device: DeviceModel, rng: np.random.Generator) -> "SignedLayer":
        return self

    def copy(self) -> "SignedLayer":
        return SignedLayer(self.weight.copy(), self.activation_bits, copy.copy(self.tracker))


class MappedLayer(_Linear):
    """Dense layer computed as ``S @ (G @ x)`` on a crossbar.

    ``cells`` hold the trainable crossbar rows. For BC the last crossbar
    row is a fixed reference at ``g_max / 2`` kept in ``reference`` and
    never updated.
    """

    def __init__(
        self,
        periphery: PeripheryMatrix,
        cells: CrossbarState | AnalogCells,
        reference=None,
        activation_bits: int | None = None,
        tracker: RangeTracker | None = None,
    ):
        super().__init__(activation_bits, tracker)
        self.periphery = periphery
        self.cells = cells
        self.reference = None if reference is None else np.asarray(reference, dtype=np.float64)
        self.n_out = periphery.n_out
        self.n_in = cells.shape[1]
        n_rows = cells.shape[0] + (0 if self.reference is None else 1)
        if n_rows != periphery.n_dummy:
            raise InvalidDimensionError(
                f"crossbar has {n_rows} rows but periphery expects {periphery.n_dummy}"
            )
        self._s = np.asarray(periphery, dtype=np.float64)
        self.override = None

    @property
    def scheme(self) -> MappingScheme:
        return self.periphery.scheme

    @property
    def mapping(self) -> str:
        return self.scheme.value

    @property
    def model(self) -> DeviceModel:
        return self.cells.model

    @property
    def conductance(self) -> np.ndarray:
        """Full ``(n_dummy, n_in)`` conductance matrix including any reference row."""
        if self.override is not None:
            return self.override
        g = self.cells.conductance
        if self.reference is not None:
            g = np.vstack([g, self.reference[None, :]])
        return g

    def effective_weight(self) -> np.ndarray:
        return recompose(self._s, self.conductance)

    def forward(self, x, train: bool = False) -> np.ndarray:
        x = self._check_input(x)
        xq, mask = self._quantize_input(x, train)
        g = self.conductance
        self._cache = (xq, mask, g)
        # Crossbar column currents, then periphery add/subtract.
        return (xq @ g.T) @ self._s.T

    def backward(self, delta) -> np.ndarray:
        xq, mask, g = self._take_cache()
        delta = np.asarray(delta, dtype=np.float64)
        d_dummy = delta @ self._s
        self.grad = (d_dummy.T @ xq)[: self.cells.shape[0]]
        return self._mask_input_grad(d_dummy @ g, mask)

    def step(self, lr: float) -> None:
        if self.grad is not None:
            self.cells.apply_update(-lr * self.grad)

    def perturbed(self, device: DeviceModel, rng: np.random.Generator) -> "MappedLayer":
        """Inference-only view whose conductances carry device variation."""
        view = copy.copy(self)
        view._cache = None
        view.grad = None
        view.override = sample_variation(self.conductance, device, rng)
        return view

    def copy(self) -> "MappedLayer":
        twin = MappedLayer(self.periphery, self.cells.copy(), self.reference,
                           self.activation_bits, copy.copy(self.tracker))
        twin.override = None if self.override is None else self.override.copy()
        return twin


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or stride < 1:
        raise InvalidDimensionError(
            f"kernel {kernel} with padding {padding} does not fit input size {size}"
        )
    return span // stride + 1


def im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """(N, C, H, W) -> (N * OH * OW, C * k * k), rows ordered (n, oh, ow)."""
    n, c, h, w = x.shape
    oh = conv_output_size(h, kernel, stride, padding)
    ow = conv_output_size(w, kernel, stride, padding)
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :oh, :ow]
    # (N, C, OH, OW, k, k) -> (N, OH, OW, C, k, k)
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kernel * kernel)


def col2im(cols: np.ndarray, shape, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to an image batch."""
    n, c, h, w = shape
    oh = conv_output_size(h, kernel, stride, padding)
    ow = conv_output_size(w, kernel, stride, padding)
    patches = cols.reshape(n, oh, ow, c, kernel, kernel)
    padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(kernel):
        for j in range(kernel):
            padded[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return padded[:, :, padding : padding + h, padding : padding + w]


class Conv2d:
    """2-D convolution executed as a matrix-vector product per output pixel.

    ``inner`` is a linear layer with ``n_in = C_in * k * k`` and
    ``n_out = C_out``; its weight rows are the flattened kernels.
    Accepts (N, C, H, W) input or flat (N, C*H*W) input.
    """

    def __init__(self, inner, in_channels: int, input_hw: tuple[int, int], kernel_size: int,
                 stride: int = 1, padding: int = 0):
        self.inner = inner
        self.in_channels = in_channels
        self.input_hw = tuple(input_hw)
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        if inner.n_in != in_channels * kernel_size * kernel_size:
            raise InvalidDimensionError(
                f"kernel bank has {inner.n_in} inputs, expected {in_channels * kernel_size**2}"
            )
        self.output_hw = (
            conv_output_size(self.input_hw[0], kernel_size, stride, padding),
            conv_output_size(self.input_hw[1], kernel_size, stride, padding),
        )
        self._shape = None

    @property
    def out_channels(self) -> int:
        return self.inner.n_out

    def _as_images(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x.reshape(x.shape[0], self.in_channels, *self.input_hw)
        if x.ndim != 4 or x.shape[1:] != (self.in_channels, *self.input_hw):
            raise InvalidDimensionError(
                f"expected images of shape (N, {self.in_channels}, {self.input_hw[0]}, "
                f"{self.input_hw[1]}), got {x.shape}"
            )
        return x

    def forward(self, x, train: bool = False) -> np.ndarray:
        flat_input = np.ndim(x) == 2
        x = self._as_images(x)
        self._shape = (x.shape, flat_input)
        cols = im2col(x, self.kernel_size, self.stride, self.padding)
        y = self.inner.forward(cols, train)
        oh, ow = self.output_hw
        return y.reshape(x.shape[0], oh, ow, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, delta) -> np.ndarray:
        if self._shape is None:
            raise ForwardStateError("backward called without a cached forward pass")
        shape, flat_input = self._shape
        delta = np.asarray(delta, dtype=np.float64)
        rows = delta.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        dcols = self.inner.backward(rows)
        dx = col2im(dcols, shape, self.kernel_size, self.stride, self.padding)
        return dx.reshape(shape[0], -1) if flat_input else dx

    def step(self, lr: float) -> None:
        self.inner.step(lr)

    def effective_weight(self) -> np.ndarray:
        return self.inner.effective_weight()

    def perturbed(self, device, rng) -> "Conv2d":
        view = copy.copy(self)
        view.inner = self.inner.perturbed(device, rng)
        view._shape = None
        return view

    def copy(self) -> "Conv2d":
        twin = copy.copy(self)
        twin.inner = self.inner.copy()
        twin._shape = None
        return twin


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._mask = x > 0
        return x * self._mask

    def backward(self, delta) -> np.ndarray:
        if self._mask is None:
            raise ForwardStateError("backward called without a cached forward pass")
        return delta * self._mask

    def copy(self) -> "ReLU":
        return ReLU()


class Flatten:
    def __init__(self):
        self._shape = None

    def forward(self, x, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, delta) -> np.ndarray:
        if self._shape is None:
            raise ForwardStateError("backward called without a cached forward pass")
        return np.asarray(delta).reshape(self._shape)

    def copy(self) -> "Flatten":
        return Flatten()


class SoftmaxOutput:
    """Marks the logits; the softmax itself is fused into the loss."""

    def forward(self, x, train: bool = False) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)

    def backward(self, delta) -> np.ndarray:
        return delta

    def copy(self) -> "SoftmaxOutput":
        return SoftmaxOutput()


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    n = logits.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
