"""Synapse device model: discrete states, symmetric nonlinearity, variation.

Conductance of state ``n`` out of ``N = 2**bits - 1`` uses a tanh-shaped
characteristic with ``p = n / N``::

    G(n) = g_max * (1 + tanh(nu * (2p - 1)) / tanh(nu)) / 2

which is linear at ``nu = 0`` and point-symmetric about the midpoint, so
an up-step at state ``n`` equals the down-step at state ``N - n``.
Programming is done by a pulse controller that only knows the nominal
linear step ``g_max / N``; the gap between commanded and realized change
is the modeled nonlinearity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidInputError, InvalidStateError

G_MIN = 0.0


@dataclass(frozen=True)
class DeviceModel:
    """Synapse device parameters.

    ``bits=None`` is an ideal analog cell (continuous conductance, the
    full-precision reference). ``variation_sigma`` is a fraction of
    ``g_max``. ``activation_bits=None`` disables activation quantization.
    """

    bits: int | None = None
    nonlinearity: float = 0.0
    g_max: float = 1.0
    variation_sigma: float = 0.0
    activation_bits: int | None = 8

    def __post_init__(self):
        if self.bits is not None:
            if int(self.bits) != self.bits or not 1 <= self.bits <= 16:
                raise InvalidInputError(f"bits must be an integer in [1, 16], got {self.bits!r}")
            object.__setattr__(self, "bits", int(self.bits))
        if not np.isfinite(self.nonlinearity) or self.nonlinearity < 0:
            raise InvalidInputError(f"nonlinearity must be >= 0, got {self.nonlinearity!r}")
        if not np.isfinite(self.g_max) or self.g_max <= G_MIN:
            raise InvalidInputError(f"g_max must be > 0, got {self.g_max!r}")
        if not np.isfinite(self.variation_sigma) or self.variation_sigma < 0:
            raise InvalidInputError(
                f"variation_sigma must be >= 0, got {self.variation_sigma!r}"
            )
        if self.activation_bits is not None:
            if int(self.activation_bits) != self.activation_bits or self.activation_bits < 1:
                raise InvalidInputError(
                    f"activation_bits must be a positive integer, got {self.activation_bits!r}"
                )
            object.__setattr__(self, "activation_bits", int(self.activation_bits))

    @property
    def g_min(self) -> float:
        return G_MIN

    @property
    def quantized(self) -> bool:
        return self.bits is not None

    @property
    def max_state(self) -> int:
        self._require_states()
        return 2**self.bits - 1

    @property
    def step(self) -> float:
        """Nominal (linear) conductance change of one programming pulse."""
        return self.g_max / self.max_state

    @cached_property
    def levels(self) -> np.ndarray:
        """Conductance of every state, ascending."""
        levels = _characteristic(np.arange(self.max_state + 1), self.max_state,
                                 self.nonlinearity, self.g_max)
        levels.setflags(write=False)
        return levels

    def _require_states(self):
        if self.bits is None:
            raise InvalidStateError("an analog device (bits=None) has no discrete states")

    def to_dict(self) -> dict:
        return {
            "bits": self.bits,
            "nonlinearity": self.nonlinearity,
            "g_max": self.g_max,
            "variation_sigma": self.variation_sigma,
            "activation_bits": self.activation_bits,
        }


def _characteristic(n, max_state: int, nu: float, g_max: float) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    if nu == 0.0:
        return g_max * n / max_state
    # 2p - 1 computed from integers so mirrored states negate exactly.
    x = (2.0 * n - max_state) / max_state
    if nu < 1e-4:
        # tanh(nu*x)/tanh(nu) to O(nu^4); the direct ratio loses precision or underflows here.
        ratio = x * (1.0 - nu * nu * (x * x - 1.0) / 3.0)
    else:
        ratio = np.tanh(nu * x) / np.tanh(nu)
    return g_max * 0.5 * (1.0 + ratio)


def state_to_conductance(n, model: DeviceModel):
    """Conductance of state index ``n`` (scalar or array)."""
    arr = np.asarray(n)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise InvalidStateError(f"state indices must be integers, got {n!r}")
        arr = arr.astype(np.int64)
    if np.any(arr < 0) or np.any(arr > model.max_state):
        raise InvalidStateError(f"state index out of range [0, {model.max_state}]: {n!r}")
    g = model.levels[arr]
    return float(g) if np.ndim(g) == 0 else g


def quantize_weight(w, model: DeviceModel):
    """Nearest device state to conductance ``w`` (clamped to the rails).

    Ties go to the larger state index.
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any(np.isnan(w)):
        raise InvalidInputError("cannot quantize NaN conductance")
    if np.any(w < 0):
        raise InvalidInputError("crossbar conductances must be non-negative")
    levels = model.levels
    target = np.minimum(w, model.g_max)
    upper = np.clip(np.searchsorted(levels, target, side="left"), 1, model.max_state)
    lower = upper - 1
    take_upper = (levels[upper] - target) <= (target - levels[lower])
    states = np.where(take_upper, upper, lower).astype(np.int64)
    return int(states) if states.ndim == 0 else states


def apply_update(states, residual, desired_delta_g, model: DeviceModel):
    """Program cells by a commanded conductance change.

    The change is converted to pulses with the nominal step; the integer
    part (truncated toward zero) moves the state and the fraction is kept
    in ``residual``. A cell pushed against a rail drops its residual.

    Returns ``(new_states, new_residual)``.
    """
    states = np.asarray(states, dtype=np.int64)
    residual = np.asarray(residual, dtype=np.float64)
    raw = np.asarray(desired_delta_g, dtype=np.float64) / model.step + residual
    pulses = np.trunc(raw)
    moved = states + pulses.astype(np.int64)
    new_states = np.clip(moved, 0, model.max_state)
    new_residual = raw - pulses
    pinned = ((new_states == model.max_state) & (raw > 0)) | ((new_states == 0) & (raw < 0))
    new_residual = np.where(pinned, 0.0, new_residual)
    if new_states.ndim == 0:
        return int(new_states), float(new_residual)
    return new_states, new_residual


def sample_variation(conductances, model: DeviceModel, rng: np.random.Generator) -> np.ndarray:
    """Add zero-mean Gaussian noise (std ``variation_sigma * g_max``), clamped to the rails."""
    g = np.array(conductances, dtype=np.float64)
    if model.variation_sigma == 0.0:
        return g
    noise = rng.normal(0.0, model.variation_sigma * model.g_max, size=g.shape)
    return np.clip(g + noise, G_MIN, model.g_max)


def activation_step(bits: int, bound: float) -> float:
    """Grid spacing of the symmetric activation quantizer.

    The grid is ``k * step`` for ``|k| <= L`` with ``L = max(1, 2**(bits-1) - 1)``,
    so zero and both range ends are always representable.
    """
    return bound / max(1, 2 ** (bits - 1) - 1)


def quantize_activation(x, bits: int, bound: float) -> np.ndarray:
    """Uniform symmetric quantization of ``x`` over ``[-bound, bound]``.

    Rounds to nearest with ties toward +inf; values beyond the range clamp.
    """
    if bits < 1:
        raise InvalidInputError(f"activation bits must be >= 1, got {bits!r}")
    x = np.asarray(x, dtype=np.float64)
    if bound <= 0:
        return np.zeros_like(x)
    step = activation_step(bits, bound)
    clipped = np.clip(x, -bound, bound)
    q = np.floor(clipped / step + 0.5) * step
    return np.clip(q, -bound, bound)


@dataclass
class RangeTracker:
    """Running absolute maximum of a layer's inputs.

    Updated with momentum during training and frozen otherwise.
    """

    momentum: float = 0.99
    value: float | None = None

    def update(self, x: np.ndarray) -> float:
        peak = float(np.max(np.abs(x))) if np.size(x) else 0.0
        if self.value is None:
            self.value = peak
        else:
            self.value = self.momentum * self.value + (1.0 - self.momentum) * peak
        return self.value

    def bound_for(self, x: np.ndarray) -> float:
        if self.value is not None:
            return self.value
        return float(np.max(np.abs(x))) if np.size(x) else 0.0


@dataclass
class CrossbarState:
    """Integer device states of a crossbar plus fractional pulse residuals."""

    states: np.ndarray
    model: DeviceModel
    residual: np.ndarray = field(default=None)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        if self.residual is None:
            self.residual = np.zeros(self.states.shape)
        if np.any(self.states < 0) or np.any(self.states > self.model.max_state):
            raise InvalidStateError(f"state indices must lie in [0, {self.model.max_state}]")

    @classmethod
    def from_conductance(cls, g, model: DeviceModel) -> "CrossbarState":
        return cls(quantize_weight(np.asarray(g, dtype=np.float64), model), model)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.states.shape

    @property
    def conductance(self) -> np.ndarray:
        return self.model.levels[self.states]

    def apply_update(self, desired_delta_g) -> None:
        self.states, self.residual = apply_update(self.states, self.residual,
                                                  desired_delta_g, self.model)

    def copy(self) -> "CrossbarState":
        return CrossbarState(self.states.copy(), self.model, self.residual.copy())


@dataclass
class AnalogCells:
    """Ideal continuous-conductance cells clamped to ``[0, g_max]``."""

    g: np.ndarray
    model: DeviceModel

    def __post_init__(self):
        self.g = np.clip(np.asarray(self.g, dtype=np.float64), G_MIN, self.model.g_max)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.g.shape

    @property
    def conductance(self) -> np.ndarray:
        return self.g

    def apply_update(self, desired_delta_g) -> None:
        self.g = np.clip(self.g + desired_delta_g, G_MIN, self.model.g_max)

    def copy(self) -> "AnalogCells":
        return AnalogCells(self.g.copy(), self.model)


def make_cells(g, model: DeviceModel) -> CrossbarState | AnalogCells:
    """Program a conductance matrix onto cells of the given device."""
    if model.quantized:
        return CrossbarState.from_conductance(g, model)
    return AnalogCells(g, model)
