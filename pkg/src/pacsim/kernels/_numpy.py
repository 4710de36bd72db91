"""Pure-numpy implementations of the hot kernels.

Plane-pair counts go through a float64 BLAS matmul; every product is 0/1 and
every sum is at most the group length, so the result is exact as long as the
group length stays below 2**53.
"""

import numpy as np


def bit_counts(codes, bit_width):
    """Ones per bit index along the last axis of ``codes``; returns ``(..., P)``."""
    codes = np.asarray(codes)
    shifts = np.arange(bit_width, dtype=codes.dtype)
    bits = (codes[..., None] >> shifts) & 1
    return bits.sum(axis=-2, dtype=np.int64)


def and_popcount(x, w):
    """Row-wise popcount of ``x AND w`` for 0/1 arrays of shape ``(B, n)``."""
    return np.bitwise_count(np.bitwise_and(x, w)).sum(axis=-1, dtype=np.int64)


def cross_plane_counts(xplanes, wplanes):
    """Counts for every (output, filter, p, q).

    xplanes: ``(M, P, n)`` 0/1, wplanes: ``(F, Q, n)`` 0/1.
    Returns int64 ``(M, F, P, Q)``.
    """
    m, p, n = xplanes.shape
    f, q, _ = wplanes.shape
    xa = xplanes.reshape(m * p, n).astype(np.float64)
    wa = wplanes.reshape(f * q, n).astype(np.float64)
    c = xa @ wa.T
    return np.rint(c).astype(np.int64).reshape(m, p, f, q).transpose(0, 2, 1, 3)


def paired_plane_counts(xplanes, wplanes):
    """Counts for aligned pairs: ``(B, P, n)`` x ``(B, Q, n)`` -> ``(B, P, Q)``."""
    xa = xplanes.astype(np.float64)
    wa = wplanes.astype(np.float64)
    c = np.matmul(xa, wa.transpose(0, 2, 1))
    return np.rint(c).astype(np.int64)
