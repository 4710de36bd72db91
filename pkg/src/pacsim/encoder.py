"""On-die sparsity encoder model.

CONV activations are encoded pixel by pixel across channels, LINEAR activations
as one group over the whole layer. A group can also be fed in chunks through
an :class:`EncoderState`, which serializes to a fixed little-endian layout so
that encoding can resume in another process.

State blob layout (little-endian)::

    magic  b"PSES"   4 bytes
    P      uint32
    N      uint32    group target
    count  uint32    values absorbed so far
    S[0..P-1] uint32 counters

Sparsity dump layout (little-endian)::

    magic  b"PSPD"   4 bytes
    P      uint32
    N      uint32    group length
    G      uint32    number of groups
    G * P counters, each ceil(counter_width(N) / 8) bytes wide
"""

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pacsim import kernels
from pacsim.bitplane import QuantTensor, SparsityVector, _as_codes, _check_bit_width
from pacsim.errors import EncoderError

STATE_MAGIC = b"PSES"
DUMP_MAGIC = b"PSPD"
_HEADER = struct.Struct("<4sIII")


def _codes_of(act):
    if isinstance(act, QuantTensor):
        return act.values, act.bit_width
    return _as_codes(act, 8), 8


def encode_conv(act):
    """One SparsityVector per pixel of an ``(H, W, C)`` activation; counts are ``(H, W, P)``."""
    codes, bw = _codes_of(act)
    if codes.ndim != 3:
        raise EncoderError(f"CONV activations must be (H, W, C), got shape {codes.shape}")
    if codes.shape[-1] == 0:
        raise EncoderError("CONV activations need C >= 1")
    return SparsityVector(kernels.bit_counts(codes, bw), bw, codes.shape[-1])


def encode_linear(act):
    """Single SparsityVector over a 1-D activation vector."""
    codes, bw = _codes_of(act)
    if codes.ndim != 1:
        raise EncoderError(f"LINEAR activations must be 1-D, got shape {codes.shape}")
    if codes.shape[0] == 0:
        raise EncoderError("LINEAR activation vector is empty")
    return SparsityVector(kernels.bit_counts(codes, bw), bw, codes.shape[0])


@dataclass
class EncoderState:
    """Sparsity counters for one group being encoded incrementally."""

    bit_width: int
    group_target: int
    counters: np.ndarray = None
    counted: int = 0

    def __post_init__(self):
        self.bit_width = _check_bit_width(self.bit_width)
        if self.group_target < 1:
            raise EncoderError("group_target must be >= 1")
        if self.counters is None:
            self.counters = np.zeros(self.bit_width, dtype=np.int64)
        else:
            self.counters = np.asarray(self.counters, dtype=np.int64).copy()
        if self.counters.shape != (self.bit_width,):
            raise EncoderError(f"expected {self.bit_width} counters, got {self.counters.shape}")
        if not 0 <= self.counted <= self.group_target:
            raise EncoderError(f"counted={self.counted} outside [0, {self.group_target}]")
        if self.counters.min() < 0 or self.counters.max() > self.counted:
            raise EncoderError("counter exceeds the number of absorbed values")

    def absorb(self, chunk):
        codes = _as_codes(chunk, self.bit_width).ravel()
        if self.counted + codes.size > self.group_target:
            raise EncoderError(
                f"overflow: {self.counted} + {codes.size} values exceeds group target {self.group_target}"
            )
        if codes.size:
            self.counters += kernels.bit_counts(codes, self.bit_width)
            self.counted += int(codes.size)
        return self

    @property
    def complete(self):
        return self.counted == self.group_target

    def result(self):
        if not self.complete:
            raise EncoderError(f"underflow: {self.counted} of {self.group_target} values absorbed")
        return SparsityVector(self.counters, self.bit_width, self.group_target)

    def to_bytes(self):
        head = _HEADER.pack(STATE_MAGIC, self.bit_width, self.group_target, self.counted)
        return head + self.counters.astype("<u4").tobytes()

    @classmethod
    def from_bytes(cls, blob):
        if len(blob) < _HEADER.size:
            raise EncoderError("truncated encoder state")
        magic, p, n, counted = _HEADER.unpack_from(blob)
        if magic != STATE_MAGIC:
            raise EncoderError(f"bad encoder state magic {magic!r}")
        if len(blob) != _HEADER.size + 4 * p:
            raise EncoderError("encoder state length does not match its bit width")
        counters = np.frombuffer(blob, dtype="<u4", count=p, offset=_HEADER.size)
        return cls(p, n, counters, counted)


def encode_chunked(chunks, state=None, bit_width=8, group_target=None):
    """Encode a group delivered as a sequence of chunks.

    Pass an existing ``state`` to resume; otherwise ``group_target`` defaults to
    the total chunk length.
    """
    chunks = [np.asarray(c) for c in chunks]
    if state is None:
        target = sum(c.size for c in chunks) if group_target is None else group_target
        state = EncoderState(bit_width, target)
    for c in chunks:
        state.absorb(c)
    return state.result()


def counter_width(n):
    """Bits needed to hold any count in [0, n]."""
    if n < 1:
        raise EncoderError("group length must be >= 1")
    return max(1, math.ceil(math.log2(n + 1)))


def compact_counter_width(n):
    """ceil(log2 n) bits: the narrower width that cannot hold the count n itself."""
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


@dataclass(frozen=True)
class CompressionStats:
    bit_width: int
    group_len: int
    raw_bits: int
    encoded_bits: int
    ratio: float
    compact_encoded_bits: int = field(default=0)
    compact_ratio: float = field(default=0.0)


def compression_stats(bit_width, n):
    raw = bit_width * n
    enc = bit_width * counter_width(n)
    compact = bit_width * compact_counter_width(n)
    return CompressionStats(bit_width, n, raw, enc, 1.0 - enc / raw, compact, 1.0 - compact / raw)


def _dump_counter_bytes(n):
    return (counter_width(n) + 7) // 8


def write_sparsity_dump(path, sv):
    """Write every group of ``sv`` (counts ``(*groups, P)``) to a dump file."""
    counts = sv.counts.reshape(-1, sv.bit_width)
    width = _dump_counter_bytes(sv.group_len)
    head = _HEADER.pack(DUMP_MAGIC, sv.bit_width, sv.group_len, counts.shape[0])
    body = counts.astype(np.uint64).astype("<u8").view(np.uint8).reshape(-1, 8)[:, :width]
    Path(path).write_bytes(head + body.tobytes())


def read_sparsity_dump(path):
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise EncoderError("truncated sparsity dump")
    magic, p, n, g = _HEADER.unpack_from(blob)
    if magic != DUMP_MAGIC:
        raise EncoderError(f"bad sparsity dump magic {magic!r}")
    width = _dump_counter_bytes(n)
    body = np.frombuffer(blob, dtype=np.uint8, offset=_HEADER.size)
    if body.size != g * p * width:
        raise EncoderError("sparsity dump length does not match its header")
    padded = np.zeros((g * p, 8), dtype=np.uint8)
    padded[:, :width] = body.reshape(-1, width)
    counts = padded.view("<u8").reshape(g, p).astype(np.int64)
    return SparsityVector(counts, p, n)
