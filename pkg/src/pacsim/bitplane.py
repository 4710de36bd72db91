"""Quantized tensors, bit-plane decomposition and bit-level sparsity counts.

Conventions used throughout the package:

* activations are channel-last, ``(H, W, C)`` for CONV and ``(N,)`` for LINEAR;
* CONV weights are ``(F, kh, kw, C)`` and flatten to the reduction order
  kernel-row x kernel-col x input-channel;
* bit planes carry the bit index on the leading axis, ``(P, *shape)``;
* sparsity counts carry the bit index on the trailing axis, ``(*groups, P)``.
"""

from dataclasses import dataclass

import numpy as np

from pacsim import kernels
from pacsim.errors import MalformedPlaneError, MalformedTensorError, PacsimError

MAX_BIT_WIDTH = 8


def round_half_away(x):
    """Round to nearest, ties away from zero (works on scalars and arrays)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def _check_bit_width(bit_width):
    if not isinstance(bit_width, (int, np.integer)) or not 1 <= bit_width <= MAX_BIT_WIDTH:
        raise MalformedTensorError(f"bit_width must be an integer in [1, {MAX_BIT_WIDTH}], got {bit_width!r}")
    return int(bit_width)


def _as_codes(values, bit_width):
    arr = np.asarray(values)
    if arr.dtype.kind == "f" and np.all(np.isfinite(arr)) and np.all(arr == np.floor(arr)):
        arr = arr.astype(np.int64)
    elif arr.dtype.kind not in "iu":
        raise MalformedTensorError(f"values must be integers, got dtype {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() >= (1 << bit_width)):
        raise MalformedTensorError(
            f"values must lie in [0, {1 << bit_width}) for bit_width {bit_width}; "
            f"got range [{arr.min()}, {arr.max()}]"
        )
    return arr.astype(np.uint8)


@dataclass(frozen=True, eq=False)
class QuantTensor:
    """Unsigned integer codes with affine dequantization ``scale * (v - zero_point)``."""

    values: np.ndarray
    bit_width: int = 8
    scale: float = 1.0
    zero_point: int = 0

    def __post_init__(self):
        bw = _check_bit_width(self.bit_width)
        object.__setattr__(self, "bit_width", bw)
        object.__setattr__(self, "values", _frozen(_as_codes(self.values, bw)))
        scale = float(self.scale)
        if not np.isfinite(scale) or scale <= 0:
            raise MalformedTensorError(f"scale must be a positive finite real, got {self.scale!r}")
        object.__setattr__(self, "scale", scale)
        zp = int(self.zero_point)
        if zp != self.zero_point or not 0 <= zp < (1 << bw):
            raise MalformedTensorError(f"zero_point must be an integer in [0, {1 << bw}), got {self.zero_point!r}")
        object.__setattr__(self, "zero_point", zp)

    @property
    def shape(self):
        return self.values.shape

    def dequantize(self):
        return self.scale * (self.values.astype(np.float64) - self.zero_point)

    @classmethod
    def quantize(cls, real, scale, zero_point=0, bit_width=8):
        """Quantize reals with round-half-away and clamping to the code range."""
        q = round_half_away(np.asarray(real, dtype=np.float64) / scale) + zero_point
        q = np.clip(q, 0, (1 << bit_width) - 1).astype(np.int64)
        return cls(q, bit_width=bit_width, scale=scale, zero_point=zero_point)

    def with_values(self, values):
        return QuantTensor(values, self.bit_width, self.scale, self.zero_point)


@dataclass(frozen=True, eq=False)
class BitPlanes:
    """Binary planes of a code tensor: ``planes[p]`` holds bit ``p`` of every value.

    The reduction (group) axis is the last axis of each plane.
    """

    planes: np.ndarray
    bit_width: int

    def __post_init__(self):
        planes = np.asarray(self.planes)
        if planes.ndim < 1 or planes.shape[0] != self.bit_width:
            raise MalformedPlaneError(
                f"expected {self.bit_width} planes on the leading axis, got shape {planes.shape}"
            )
        if planes.size and not np.all((planes == 0) | (planes == 1)):
            raise MalformedPlaneError("plane elements must be 0 or 1")
        object.__setattr__(self, "planes", _frozen(planes.astype(np.uint8)))

    @property
    def shape(self):
        """Shape of the underlying value tensor."""
        return self.planes.shape[1:]

    @property
    def group_len(self):
        return self.planes.shape[-1] if self.planes.ndim > 1 else 1


@dataclass(frozen=True, eq=False)
class SparsityVector:
    """Per-bit counts of ones over groups of length ``group_len``.

    ``counts`` has shape ``(*groups, bit_width)``; a single group is ``(bit_width,)``.
    """

    counts: np.ndarray
    bit_width: int
    group_len: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim < 1 or counts.shape[-1] != self.bit_width:
            raise PacsimError(f"counts must end in a bit axis of length {self.bit_width}, got {counts.shape}")
        if self.group_len < 1:
            raise PacsimError("group_len must be >= 1")
        if counts.size and (counts.min() < 0 or counts.max() > self.group_len):
            raise PacsimError(f"counts must lie in [0, {self.group_len}]")
        object.__setattr__(self, "counts", _frozen(counts))

    def weighted_sum(self):
        """Sum of the raw values in each group, recovered as sum_p 2^p * S[p]."""
        weights = np.int64(1) << np.arange(self.bit_width, dtype=np.int64)
        return self.counts @ weights

    def __getitem__(self, idx):
        return SparsityVector(self.counts[idx], self.bit_width, self.group_len)


def decompose(t, bit_width=None):
    """Split a tensor into its bit planes.

    ``t`` is a :class:`QuantTensor` or a raw integer array (then ``bit_width``
    is required, default 8).
    """
    if isinstance(t, QuantTensor):
        values, bw = t.values, t.bit_width
    else:
        bw = _check_bit_width(8 if bit_width is None else bit_width)
        values = _as_codes(t, bw)
    shifts = np.arange(bw, dtype=np.uint8).reshape((bw,) + (1,) * values.ndim)
    return BitPlanes((values[None, ...] >> shifts) & 1, bw)


def recompose(b):
    """Inverse of :func:`decompose`; returns int64 values."""
    if not isinstance(b, BitPlanes):
        raise MalformedPlaneError("recompose expects BitPlanes")
    weights = (np.int64(1) << np.arange(b.bit_width, dtype=np.int64)).reshape((b.bit_width,) + (1,) * (b.planes.ndim - 1))
    return (b.planes.astype(np.int64) * weights).sum(axis=0)


def count_sparsity(b, group_axis=-1):
    """Count ones per bit index along ``group_axis`` (an axis of the value tensor)."""
    if not isinstance(b, BitPlanes):
        raise MalformedPlaneError("count_sparsity expects BitPlanes")
    ndim = b.planes.ndim - 1
    if ndim == 0:
        raise PacsimError("cannot count sparsity of a scalar; need a group axis")
    axis = group_axis % ndim
    n = b.shape[axis]
    if n == 0:
        raise PacsimError("empty group")
    counts = b.planes.sum(axis=axis + 1, dtype=np.int64)
    return SparsityVector(np.moveaxis(counts, 0, -1), b.bit_width, n)


def count_codes(codes, bit_width=8):
    """Fast path: sparsity of raw codes grouped along their last axis."""
    codes = np.asarray(codes)
    if codes.ndim == 0 or codes.shape[-1] == 0:
        raise PacsimError("empty group")
    return SparsityVector(kernels.bit_counts(codes, bit_width), bit_width, codes.shape[-1])
