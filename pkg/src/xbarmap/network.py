"""Layer specs, model assembly, initialization and SGD training."""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from .data import Dataset
from .device import DeviceModel, make_cells
from .errors import InvalidDimensionError, InvalidInputError
from .layers import (
    Conv2d,
    Flatten,
    MappedLayer,
    ReLU,
    SignedLayer,
    SoftmaxOutput,
    softmax_cross_entropy,
)
from .metrics import MetricsRecord, RunContext
from .periphery import MappingScheme, build_periphery, decompose

BASELINE = "baseline"
MAPPINGS = (BASELINE, "de", "bc", "acm")
LINEAR_KINDS = ("dense", "conv2d")
KINDS = LINEAR_KINDS + ("relu", "flatten", "softmax")


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent named random stream derived from a top-level seed."""
    key = zlib.crc32(name.encode())
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def parse_mapping(mapping) -> str:
    text = str(getattr(mapping, "value", mapping)).lower()
    if text not in MAPPINGS:
        raise InvalidInputError(f"unknown mapping {mapping!r}; expected one of {MAPPINGS}")
    return text


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    n_in: int | None = None
    n_out: int | None = None
    in_channels: int | None = None
    out_channels: int | None = None
    kernel_size: int | None = None
    stride: int = 1
    padding: int = 0
    input_hw: tuple[int, int] | None = None
    mapping: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown layer kind {self.kind!r}")
        if self.kind not in LINEAR_KINDS and self.mapping is not None:
            raise InvalidInputError(f"{self.kind} layers carry no mapping")
        if self.mapping is not None:
            object.__setattr__(self, "mapping", parse_mapping(self.mapping))
        if self.input_hw is not None:
            object.__setattr__(self, "input_hw", tuple(int(v) for v in self.input_hw))
        if self.kind == "dense" and not (_positive(self.n_in) and _positive(self.n_out)):
            raise InvalidDimensionError("dense layers need positive n_in and n_out")
        if self.kind == "conv2d":
            if not all(_positive(v) for v in (self.in_channels, self.out_channels, self.kernel_size)):
                raise InvalidDimensionError("conv2d layers need positive channels and kernel_size")
            if self.input_hw is None or self.stride < 1 or self.padding < 0:
                raise InvalidDimensionError("conv2d layers need input_hw, stride >= 1, padding >= 0")

    @property
    def is_linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    def fans(self) -> tuple[int, int]:
        if self.kind == "dense":
            return self.n_in, self.n_out
        k2 = self.kernel_size * self.kernel_size
        return self.in_channels * k2, self.out_channels * k2

    def matrix_shape(self) -> tuple[int, int]:
        """(n_out, n_in) of the signed matrix this layer maps to a crossbar."""
        if self.kind == "dense":
            return self.n_out, self.n_in
        return self.out_channels, self.in_channels * self.kernel_size**2

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def _positive(value) -> bool:
    return value is not None and int(value) == value and value >= 1


def dense(n_in: int, n_out: int, mapping: str | None = None) -> LayerSpec:
    return LayerSpec("dense", n_in=n_in, n_out=n_out, mapping=mapping)


def conv2d(in_channels: int, out_channels: int, kernel_size: int, input_hw, stride: int = 1,
           padding: int = 0, mapping: str | None = None) -> LayerSpec:
    return LayerSpec("conv2d", in_channels=in_channels, out_channels=out_channels,
                     kernel_size=kernel_size, stride=stride, padding=padding,
                     input_hw=tuple(input_hw), mapping=mapping)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


def mlp(sizes) -> list[LayerSpec]:
    """Dense/ReLU stack, e.g. ``mlp([784, 128, 10])``."""
    sizes = list(sizes)
    specs = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        specs.append(dense(a, b))
        if i < len(sizes) - 2:
            specs.append(relu())
    specs.append(softmax())
    return specs


def small_cnn(n_classes: int = 10, image_hw=(28, 28), channels=(8, 16)) -> list[LayerSpec]:
    """Two stride-2 3x3 convolutions followed by one dense layer."""
    h, w = image_hw
    c1, c2 = channels
    h1, w1 = (h + 1) // 2, (w + 1) // 2
    h2, w2 = (h1 + 1) // 2, (w1 + 1) // 2
    return [
        conv2d(1, c1, 3, (h, w), stride=2, padding=1),
        relu(),
        conv2d(c1, c2, 3, (h1, w1), stride=2, padding=1),
        relu(),
        flatten(),
        dense(c2 * h2 * w2, n_classes),
        softmax(),
    ]


ARCHITECTURES = {"mlp": mlp, "cnn": small_cnn}


class Network:
    """Sequential model; ``forward`` returns logits."""

    def __init__(self, specs: list[LayerSpec], layers: list, device: DeviceModel):
        if len(specs) != len(layers):
            raise InvalidDimensionError("one layer object per spec required")
        self.specs = list(specs)
        self.layers = list(layers)
        self.device = device

    def forward(self, x, train: bool = False) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out, train)
        return out

    def backward(self, dlogits) -> np.ndarray:
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def step(self, lr: float) -> None:
        for layer in self.linear_layers():
            layer.step(lr)

    def predict(self, x, batch_size: int = 1000) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = [self.forward(x[i : i + batch_size]).argmax(axis=1)
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def linear_layers(self) -> list:
        return [layer for spec, layer in zip(self.specs, self.layers) if spec.is_linear]

    def crossbar_layers(self) -> list[MappedLayer]:
        """Mapped dense layers, including the kernel banks inside convolutions."""
        found = []
        for layer in self.linear_layers():
            inner = layer.inner if isinstance(layer, Conv2d) else layer
            if isinstance(inner, MappedLayer):
                found.append(inner)
        return found

    def effective_weights(self) -> list[np.ndarray]:
        return [layer.effective_weight() for layer in self.linear_layers()]

    def perturbed(self, device: DeviceModel, rng: np.random.Generator) -> "Network":
        """Inference-only copy with device variation applied to every crossbar."""
        layers = [
            layer.perturbed(device, rng) if spec.is_linear else layer.copy()
            for spec, layer in zip(self.specs, self.layers)
        ]
        return Network(self.specs, layers, self.device)

    def copy(self) -> "Network":
        return Network(self.specs, [layer.copy() for layer in self.layers], self.device)


def _signed_layer(w: np.ndarray, mapping: str, device: DeviceModel):
    if mapping == BASELINE:
        return SignedLayer(w, device.activation_bits)
    scheme = MappingScheme.parse(mapping)
    parts = decompose(w, scheme, device.g_max)
    n_out = w.shape[0]
    periphery = build_periphery(scheme, n_out)
    if scheme is MappingScheme.BC:
        cells = make_cells(parts.m[:n_out], device)
        reference = parts.m[n_out]
    else:
        cells = make_cells(parts.m, device)
        reference = None
    return MappedLayer(periphery, cells, reference, device.activation_bits)


def build_layer(spec: LayerSpec, w: np.ndarray | None, device: DeviceModel):
    if spec.kind == "dense":
        return _signed_layer(w, spec.mapping, device)
    if spec.kind == "conv2d":
        inner = _signed_layer(w, spec.mapping, device)
        return Conv2d(inner, spec.in_channels, spec.input_hw, spec.kernel_size,
                      spec.stride, spec.padding)
    return {"relu": ReLU, "flatten": Flatten, "softmax": SoftmaxOutput}[spec.kind]()


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def initialize_model(specs, scheme, device: DeviceModel | None = None, seed: int = 0) -> Network:
    """Build a network whose linear layers use ``scheme`` unless a spec pins its own.

    Every scheme draws the same signed matrices from the ``init`` stream
    (uniform Glorot) and then maps them onto the crossbar, so paired runs
    start from the same effective weights up to quantization.
    """
    device = device or DeviceModel()
    default = parse_mapping(scheme)
    rng = rng_stream(seed, "init")
    resolved, layers = [], []
    for spec in specs:
        if spec.is_linear:
            spec = replace(spec, mapping=spec.mapping or default)
            r = glorot_bound(*spec.fans())
            w = rng.uniform(-r, r, size=spec.matrix_shape())
        else:
            w = None
        resolved.append(spec)
        layers.append(build_layer(spec, w, device))
    return Network(resolved, layers, device)


@dataclass(frozen=True)
class TrainConfig:
    """Vanilla SGD: no momentum, no weight decay, softmax cross-entropy loss."""

    lr: float = 0.1
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0 or not math.isfinite(self.lr):
            raise InvalidInputError(f"lr must be positive, got {self.lr!r}")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise InvalidInputError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be a positive integer, got {self.batch_size!r}")


@dataclass
class TrainResult:
    model: Network
    history: list[MetricsRecord]
    diverged: str | None = None


def accuracy(model: Network, dataset: Dataset) -> float:
    return float(np.mean(model.predict(dataset.images) == dataset.labels))


def run_context(model: Network, seed: int) -> RunContext:
    mappings = {spec.mapping for spec in model.specs if spec.is_linear}
    scheme = mappings.pop() if len(mappings) == 1 else "+".join(sorted(mappings))
    return RunContext(scheme, model.device.bits, model.device.nonlinearity,
                      model.device.variation_sigma, seed)


def train(
    model: Network,
    dataset: Dataset,
    config: TrainConfig,
    test: Dataset | None = None,
    on_epoch: Callable[[int, Network], None] | None = None,
) -> TrainResult:
    """Train a copy of ``model`` with minibatch SGD.

    Shuffling uses the ``shuffle`` stream of ``config.seed``; the input
    model is never modified. A non-finite loss stops training and is
    reported in ``TrainResult.diverged``.
    """
    if len(dataset) == 0:
        raise InvalidInputError("training set is empty")
    model = model.copy()
    context = run_context(model, config.seed)
    shuffle = rng_stream(config.seed, "shuffle")
    history: list[MetricsRecord] = []
    n = len(dataset)
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(n)
        total_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                with np.errstate(over="raise", invalid="raise"):
                    logits = model.forward(dataset.images[idx], train=True)
                    loss, dlogits = softmax_cross_entropy(logits, dataset.labels[idx])
            except (FloatingPointError, InvalidInputError) as exc:
                loss, reason = math.nan, str(exc)
            else:
                reason = None
            if not math.isfinite(loss):
                message = f"non-finite loss at epoch {epoch}, batch starting at {start}"
                if reason:
                    message += f" ({reason})"
                return TrainResult(model, history, message)
            model.backward(dlogits)
            model.step(config.lr)
            total_loss += loss * len(idx)
        history.append(MetricsRecord(
            context,
            epoch,
            total_loss / n,
            accuracy(model, dataset),
            accuracy(model, test) if test is not None else math.nan,
        ))
        if on_epoch is not None:
            on_epoch(epoch, model)
    return TrainResult(model, history)
