"""Periphery matrices for mapping signed weights onto non-negative crossbars.

A signed weight matrix ``W`` (``n_out x n_in``) is realized as ``S @ M``,
where ``M >= 0`` (``n_dummy x n_in``) lives on the crossbar and ``S``
(``n_out x n_dummy``, entries in {-1, 0, +1}) is a fixed add/subtract
network at the array periphery. Three schemes are supported:

* DE  -- two columns per output, ``W = M+ - M-``
* BC  -- one shared reference column held at ``g_max / 2``
* ACM -- each output is the difference of two adjacent columns
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidDimensionError, InvalidInputError

RANK_TOLERANCE = 1e-9


class MappingScheme(str, Enum):
    DE = "de"
    BC = "bc"
    ACM = "acm"

    @classmethod
    def parse(cls, value: "MappingScheme | str") -> "MappingScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidInputError(
                f"unknown mapping scheme {value!r}; expected one of "
                f"{[s.value for s in cls]}"
            ) from None


def n_dummy_for(scheme: MappingScheme | str, n_out: int) -> int:
    """Number of crossbar columns needed for ``n_out`` signed outputs."""
    scheme = MappingScheme.parse(scheme)
    return 2 * n_out if scheme is MappingScheme.DE else n_out + 1


@dataclass(frozen=True)
class PeripheryMatrix:
    """Fixed signed combination matrix ``S`` of shape ``(n_out, n_dummy)``.

    ``scheme`` is None only for raw matrices wrapped for validation.
    """

    entries: np.ndarray
    scheme: MappingScheme | None = None

    def __post_init__(self):
        entries = np.asarray(self.entries)
        if entries.ndim != 2:
            raise InvalidDimensionError(f"periphery must be 2-D, got shape {entries.shape}")
        entries = entries.copy()
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n_out(self) -> int:
        return self.entries.shape[0]

    @property
    def n_dummy(self) -> int:
        return self.entries.shape[1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def build_periphery(scheme: MappingScheme | str, n_out: int) -> PeripheryMatrix:
    """Canonical periphery matrix for ``scheme`` with ``n_out`` outputs.

    Column ordering: DE interleaves (positive, negative) pairs, BC puts the
    reference column last, ACM pairs column ``j`` with column ``j + 1``.
    """
    scheme = MappingScheme.parse(scheme)
    if int(n_out) != n_out or n_out < 1:
        raise InvalidDimensionError(f"n_out must be a positive integer, got {n_out!r}")
    n_out = int(n_out)
    rows = np.arange(n_out)
    s = np.zeros((n_out, n_dummy_for(scheme, n_out)), dtype=np.int8)
    if scheme is MappingScheme.DE:
        s[rows, 2 * rows] = 1
        s[rows, 2 * rows + 1] = -1
    elif scheme is MappingScheme.BC:
        s[rows, rows] = 1
        s[:, n_out] = -1
    else:
        s[rows, rows] = 1
        s[rows, rows + 1] = -1
    return PeripheryMatrix(s, scheme)


def elimination_rank(a, tol: float = RANK_TOLERANCE) -> int:
    """Rank by Gaussian elimination with partial pivoting.

    A pivot counts when its magnitude exceeds ``tol`` times the largest
    pivot accepted so far (the first pivot is compared to the largest
    absolute entry of the matrix).
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidDimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    n_rows, n_cols = a.shape
    scale = np.abs(a).max() if a.size else 0.0
    if scale == 0.0:
        return 0
    rank = 0
    largest = scale
    for col in range(n_cols):
        if rank == n_rows:
            break
        pivot_row = rank + int(np.argmax(np.abs(a[rank:, col])))
        pivot = a[pivot_row, col]
        if abs(pivot) <= tol * largest:
            continue
        largest = max(largest, abs(pivot))
        a[[rank, pivot_row]] = a[[pivot_row, rank]]
        below = a[rank + 1 :, col] / pivot
        a[rank + 1 :] -= np.outer(below, a[rank])
        rank += 1
    return rank


@dataclass(frozen=True)
class ValidationReport:
    rank_ok: bool
    positive_null_ok: bool

    @property
    def ok(self) -> bool:
        return self.rank_ok and self.positive_null_ok


def validate_periphery(s: PeripheryMatrix | np.ndarray) -> ValidationReport:
    """Check that ``S`` has full row rank and annihilates the all-ones vector.

    Full row rank makes every signed column reachable; a strictly positive
    null vector (``1`` is used as the witness) lets any particular solution
    be shifted into the non-negative orthant.
    """
    entries = np.asarray(s)
    if entries.ndim != 2:
        raise InvalidDimensionError(f"periphery must be 2-D, got shape {entries.shape}")
    rank_ok = elimination_rank(entries) == entries.shape[0]
    if np.issubdtype(entries.dtype, np.integer):
        row_sums = entries.astype(np.int64).sum(axis=1)
    else:
        row_sums = entries.sum(axis=1)
    return ValidationReport(rank_ok=bool(rank_ok), positive_null_ok=bool(np.all(row_sums == 0)))


@dataclass(frozen=True)
class Decomposition:
    """Non-negative crossbar matrix ``m`` with ``S @ m * scale == w``.

    ``scale`` is 1 when ``w`` fits the scheme's range as-is; otherwise
    ``w / scale`` is what the crossbar actually represents.
    """

    m: np.ndarray
    scale: float
    scheme: MappingScheme
    g_max: float

    @property
    def periphery(self) -> PeripheryMatrix:
        n_dummy = self.m.shape[0]
        n_out = n_dummy // 2 if self.scheme is MappingScheme.DE else n_dummy - 1
        return build_periphery(self.scheme, n_out)


def _as_weight_matrix(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
        raise InvalidDimensionError(f"weight matrix must be non-empty 2-D, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidInputError("weight matrix contains non-finite entries")
    return w


def decompose(w, scheme: MappingScheme | str, g_max: float = 1.0) -> Decomposition:
    """Split a signed ``(n_out, n_in)`` matrix into a crossbar matrix ``m``.

    The result satisfies ``recompose(S, m) * scale == w`` and
    ``0 <= m <= g_max``. When ``w`` exceeds what the scheme can represent,
    it is down-scaled uniformly rather than clipped.
    """
    scheme = MappingScheme.parse(scheme)
    if not np.isfinite(g_max) or g_max <= 0:
        raise InvalidInputError(f"g_max must be positive, got {g_max!r}")
    w = _as_weight_matrix(w)
    n_out, n_in = w.shape

    if scheme is MappingScheme.DE:
        peak = np.abs(w).max()
        shrink = min(1.0, g_max / peak) if peak > 0 else 1.0
        ws = w * shrink
        m = np.empty((2 * n_out, n_in))
        m[0::2] = np.maximum(ws, 0.0)
        m[1::2] = np.maximum(-ws, 0.0)
    elif scheme is MappingScheme.BC:
        peak = np.abs(w).max()
        half = g_max / 2.0
        shrink = min(1.0, half / peak) if peak > 0 else 1.0
        m = np.empty((n_out + 1, n_in))
        m[:n_out] = w * shrink + half
        m[n_out] = half
    else:
        # Particular solution anchored at m_1 = 0: m_{j+1} = m_j - w_j.
        partial = np.zeros((n_out + 1, n_in))
        partial[1:] = -np.cumsum(w, axis=0)
        spread = (partial.max(axis=0) - partial.min(axis=0)).max()
        shrink = min(1.0, g_max / spread) if spread > 0 else 1.0
        partial *= shrink
        m = partial - partial.min(axis=0)

    np.clip(m, 0.0, g_max, out=m)
    return Decomposition(m=m, scale=float(1.0 / shrink), scheme=scheme, g_max=float(g_max))


def recompose(s: PeripheryMatrix | np.ndarray, m) -> np.ndarray:
    """Dense product ``S @ M``."""
    entries = np.asarray(s, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if entries.ndim != 2 or m.ndim != 2 or entries.shape[1] != m.shape[0]:
        raise InvalidDimensionError(
            f"cannot combine periphery {entries.shape} with crossbar matrix {m.shape}"
        )
    return entries @ m


def effective_weight_range(scheme: MappingScheme | str, g_max: float = 1.0) -> tuple[float, float]:
    """Per-weight representable interval for a scheme.

    For ACM the bounds are reached only when neighbouring columns sit at
    opposite rails, which couples adjacent weights; the interval is not
    jointly achievable for all weights at once.
    """
    scheme = MappingScheme.parse(scheme)
    if scheme is MappingScheme.BC:
        return (-g_max / 2.0, g_max / 2.0)
    return (-float(g_max), float(g_max))


def telescoping_residual(m) -> float:
    """|sum(S @ M) - (sum of first crossbar column - sum of last)| under ACM."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2 or m.shape[0] < 2:
        raise InvalidDimensionError(f"ACM crossbar matrix needs at least 2 rows, got {m.shape}")
    s = build_periphery(MappingScheme.ACM, m.shape[0] - 1)
    total = recompose(s, m).sum()
    return float(abs(total - (m[0].sum() - m[-1].sum())))
