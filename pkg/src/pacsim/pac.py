"""Bit-serial MAC, the sparsity-domain point estimate, hybrid MAC and
dynamic cycle configuration.

All MAC routines accept batched :class:`BitPlanes`: planes of shape
``(P, *batch, n)`` for activations and ``(Q, *batch, n)`` for weights, paired
element-wise over ``batch``. Scalars come back as Python ints, batches as int64
arrays.
"""

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import lcm

import numpy as np

from pacsim import kernels
from pacsim.bitplane import BitPlanes, SparsityVector, count_sparsity
from pacsim.errors import PacsimError, ShapeMismatchError

_PAIR_CHUNK = 256


class Domain(Enum):
    DETERMINISTIC = "D"
    APPROXIMATE = "A"


@dataclass(frozen=True, eq=False)
class CycleMap:
    """Partition of the P x Q bit-cycle grid; ``deterministic[p, q]`` is True for D cells."""

    deterministic: np.ndarray

    def __post_init__(self):
        d = np.array(self.deterministic, dtype=bool)
        if d.ndim != 2 or 0 in d.shape:
            raise PacsimError(f"cycle map must be a non-empty P x Q grid, got shape {d.shape}")
        d.setflags(write=False)
        object.__setattr__(self, "deterministic", d)

    @classmethod
    def static(cls, P=8, Q=8, approx_bits=4):
        """Operand-based map: (p, q) is deterministic iff p >= approx_bits and q >= approx_bits."""
        if not 0 <= approx_bits <= min(P, Q):
            raise PacsimError(f"approx_bits must be in [0, {min(P, Q)}], got {approx_bits}")
        d = np.zeros((P, Q), dtype=bool)
        d[approx_bits:, approx_bits:] = True
        return cls(d)

    @classmethod
    def all_deterministic(cls, P=8, Q=8):
        return cls(np.ones((P, Q), dtype=bool))

    @classmethod
    def all_approximate(cls, P=8, Q=8):
        return cls(np.zeros((P, Q), dtype=bool))

    @property
    def P(self):
        return self.deterministic.shape[0]

    @property
    def Q(self):
        return self.deterministic.shape[1]

    @property
    def n_deterministic(self):
        return int(self.deterministic.sum())

    def __getitem__(self, cell):
        return Domain.DETERMINISTIC if self.deterministic[cell] else Domain.APPROXIMATE

    def cells(self, domain):
        mask = self.deterministic if domain is Domain.DETERMINISTIC else ~self.deterministic
        return [(int(p), int(q)) for p, q in zip(*np.nonzero(mask))]

    def __eq__(self, other):
        return isinstance(other, CycleMap) and np.array_equal(self.deterministic, other.deterministic)

    def __hash__(self):
        return hash(self.deterministic.tobytes())

    def __repr__(self):
        return f"CycleMap(P={self.P}, Q={self.Q}, deterministic={self.n_deterministic})"


@dataclass(frozen=True)
class Thresholds:
    th0: float
    th1: float
    th2: float

    def __post_init__(self):
        # non-strict ordering so the degenerate (0, 0, 0) set is expressible
        if not 0.0 <= self.th0 <= self.th1 <= self.th2 <= 1.0:
            raise PacsimError(f"thresholds must satisfy 0 <= TH0 <= TH1 <= TH2 <= 1, got {self}")

    @classmethod
    def parse(cls, text):
        parts = [float(v) for v in str(text).split(",")]
        if len(parts) != 3:
            raise PacsimError(f"expected three comma-separated thresholds, got {text!r}")
        return cls(*parts)

    def as_tuple(self):
        return (self.th0, self.th1, self.th2)


def _shift_weights(P, Q):
    p = np.arange(P, dtype=np.int64)[:, None]
    q = np.arange(Q, dtype=np.int64)[None, :]
    return np.int64(1) << (p + q)


def _round_ratio(num, den):
    """Nearest integer to num/den for num >= 0, den > 0; ties go up (away from zero)."""
    return (2 * num + den) // (2 * den)


def exact_binary_mac(x_plane, w_plane):
    """Number of positions where both binary vectors are 1."""
    x = np.asarray(x_plane, dtype=np.uint8)
    w = np.asarray(w_plane, dtype=np.uint8)
    if x.shape != w.shape:
        raise ShapeMismatchError(f"plane shapes differ: {x.shape} vs {w.shape}")
    if x.shape[-1:] == (0,) or x.ndim == 0:
        raise ShapeMismatchError("binary MAC needs length >= 1")
    out = kernels.and_popcount(x, w)
    return int(out) if out.ndim == 0 else out


def _check_pair(x, w):
    if not isinstance(x, BitPlanes) or not isinstance(w, BitPlanes):
        raise PacsimError("expected BitPlanes operands")
    if x.shape != w.shape:
        raise ShapeMismatchError(f"operand shapes differ: {x.shape} vs {w.shape}")
    if x.group_len < 1 or x.planes.ndim < 2:
        raise ShapeMismatchError("operands need a reduction axis of length >= 1")


def plane_pair_counts(x, w, rows=None, cols=None):
    """Binary MAC counts for every (p, q) of each operand pair: ``(*batch, P', Q')``.

    ``rows``/``cols`` restrict the activation and weight bit indices.
    """
    _check_pair(x, w)
    xp = np.moveaxis(x.planes, 0, -2)
    wp = np.moveaxis(w.planes, 0, -2)
    if rows is not None:
        xp = xp[..., rows, :]
    if cols is not None:
        wp = wp[..., cols, :]
    batch = xp.shape[:-2]
    xp = xp.reshape((-1,) + xp.shape[-2:])
    wp = wp.reshape((-1,) + wp.shape[-2:])
    out = np.empty((xp.shape[0], xp.shape[1], wp.shape[1]), dtype=np.int64)
    for s in range(0, xp.shape[0], _PAIR_CHUNK):
        out[s:s + _PAIR_CHUNK] = kernels.paired_plane_counts(xp[s:s + _PAIR_CHUNK], wp[s:s + _PAIR_CHUNK])
    return out.reshape(batch + out.shape[1:])


def _scalarize(a):
    a = np.asarray(a)
    return int(a) if a.ndim == 0 else a


def exact_mac(x, w):
    """Bit-serial MAC: sum over all (p, q) of 2^(p+q) times the binary MAC count."""
    counts = plane_pair_counts(x, w)
    total = (counts * _shift_weights(x.bit_width, w.bit_width)).sum(axis=(-2, -1))
    return _scalarize(total)


def pac_estimate(s_x, s_w, n):
    """Expected binary MAC output from bit counts: ``S_x * S_w / n`` as an exact Fraction."""
    s_x, s_w, n = int(s_x), int(s_w), int(n)
    if n < 1:
        raise PacsimError("n must be >= 1")
    if not (0 <= s_x <= n and 0 <= s_w <= n):
        raise PacsimError(f"counts must lie in [0, {n}], got ({s_x}, {s_w})")
    return Fraction(s_x * s_w, n)


def approx_numerator(sx_counts, sw_counts, approx_mask):
    """``sum_{(p,q) in A} 2^(p+q) S_x[p] S_w[q]`` as int64, paired over leading axes.

    ``approx_mask`` is ``(P, Q)`` or per-pair ``(*batch, P, Q)``.
    """
    P, Q = sx_counts.shape[-1], sw_counts.shape[-1]
    xs = sx_counts * (np.int64(1) << np.arange(P, dtype=np.int64))
    ws = sw_counts * (np.int64(1) << np.arange(Q, dtype=np.int64))
    a = np.asarray(approx_mask, dtype=np.int64)
    return np.einsum("...p,...pq,...q->...", xs, np.broadcast_to(a, xs.shape[:-1] + (P, Q)), ws)


def _chunk_bounds(n, chunk_size):
    return [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]


def hybrid_mac(x, w, cmap, chunk_size=None):
    """Deterministic cycles computed exactly, approximate cycles from bit counts.

    The approximate term is accumulated exactly and rounded once (half away
    from zero). With ``chunk_size`` the bit counts are taken over consecutive
    chunks of the reduction axis instead of the whole group.
    """
    _check_pair(x, w)
    if (cmap.P, cmap.Q) != (x.bit_width, w.bit_width):
        raise ShapeMismatchError(f"cycle map is {cmap.P}x{cmap.Q}, operands are {x.bit_width}x{w.bit_width}")
    n = x.group_len
    d = cmap.deterministic
    det = 0
    if d.any():
        rows = np.nonzero(d.any(axis=1))[0]
        cols = np.nonzero(d.any(axis=0))[0]
        counts = plane_pair_counts(x, w, rows, cols)
        weights = _shift_weights(x.bit_width, w.bit_width)[np.ix_(rows, cols)] * d[np.ix_(rows, cols)]
        det = (counts * weights).sum(axis=(-2, -1))
    approx = ~d
    if chunk_size is None or chunk_size >= n:
        num = approx_numerator(count_sparsity(x).counts, count_sparsity(w).counts, approx)
        return _scalarize(det + _round_ratio(num, n))

    if chunk_size < 1:
        raise PacsimError("chunk_size must be >= 1")
    parts = {}
    for s, e in _chunk_bounds(n, chunk_size):
        xs = count_sparsity(BitPlanes(x.planes[..., s:e], x.bit_width)).counts
        ws = count_sparsity(BitPlanes(w.planes[..., s:e], w.bit_width)).counts
        parts[e - s] = parts.get(e - s, 0) + approx_numerator(xs, ws, approx)
    den = lcm(*parts)
    num = sum(np.asarray(v, dtype=object) * (den // length) for length, v in parts.items())
    total = np.asarray(det, dtype=object) + _round_ratio(num, den)
    return _scalarize(np.asarray(total, dtype=np.int64))


def pac_mac(x, w):
    """Pure sparsity-domain estimate of the full MAC (every cycle approximate)."""
    return hybrid_mac(x, w, CycleMap.all_approximate(x.bit_width, w.bit_width))


def speculate(s_x):
    """Normalized weighted activation sparsity in [0, 1]: mean code / max code."""
    if not isinstance(s_x, SparsityVector):
        raise PacsimError("speculate expects a SparsityVector")
    full = s_x.group_len * ((1 << s_x.bit_width) - 1)
    out = s_x.weighted_sum() / full
    return float(out) if np.ndim(out) == 0 else out


DEMOTIONS_PER_BAND = (6, 4, 2, 0)


def demotion_order(base_map):
    """Deterministic cells in demotion order: ascending p+q, then smaller q first."""
    cells = base_map.cells(Domain.DETERMINISTIC)
    return sorted(cells, key=lambda c: (c[0] + c[1], c[1], c[0]))


def demotion_count(spec, th):
    """Cells to demote for each speculation value (vectorized)."""
    spec = np.asarray(spec, dtype=np.float64)
    if np.any(~np.isfinite(spec)) or np.any(spec < 0.0) or np.any(spec > 1.0):
        raise PacsimError("speculation values must lie in [0, 1]")
    band = (spec > th.th0).astype(np.int64) + (spec > th.th1) + (spec > th.th2)
    return np.asarray(DEMOTIONS_PER_BAND, dtype=np.int64)[band]


def dynamic_masks(spec, th, base_map):
    """Per-value deterministic masks ``(*spec.shape, P, Q)`` after demotion."""
    order = demotion_order(base_map)
    k = np.asarray(np.minimum(demotion_count(spec, th), len(order)))
    out = np.broadcast_to(base_map.deterministic, k.shape + base_map.deterministic.shape).copy()
    for rank, (p, q) in enumerate(order[: int(k.max(initial=0))]):
        out[..., p, q] &= k <= rank
    return out


def configure_cycles(spec, th, base_map):
    """Cycle map for one speculation value under a threshold set."""
    return CycleMap(dynamic_masks(float(spec), th, base_map))
