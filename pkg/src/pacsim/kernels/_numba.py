"""Numba implementations of the hot kernels.

Bit planes are packed into uint64 words and reduced with a SWAR popcount.
Signatures and results match ``_numpy`` exactly.
"""

import numpy as np
from numba import njit

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


@njit(cache=True, inline="always")
def _popcount64(v):
    v = v - ((v >> np.uint64(1)) & _M1)
    v = (v & _M2) + ((v >> np.uint64(2)) & _M2)
    v = (v + (v >> np.uint64(4))) & _M4
    return (v * _H01) >> np.uint64(56)


def pack_bits(planes):
    """Pack a 0/1 array along its last axis into little-endian uint64 words."""
    planes = np.ascontiguousarray(planes, dtype=np.uint8)
    packed = np.packbits(planes, axis=-1, bitorder="little")
    pad = (-packed.shape[-1]) % 8
    if pad:
        widths = [(0, 0)] * (packed.ndim - 1) + [(0, pad)]
        packed = np.pad(packed, widths)
    return np.ascontiguousarray(packed).view(np.uint64)


@njit(cache=True)
def _bit_counts_2d(codes, bit_width):
    g, n = codes.shape
    out = np.zeros((g, bit_width), dtype=np.int64)
    for i in range(g):
        for j in range(n):
            v = np.int64(codes[i, j])
            for p in range(bit_width):
                out[i, p] += (v >> p) & 1
    return out


def bit_counts(codes, bit_width):
    codes = np.asarray(codes)
    lead = codes.shape[:-1]
    flat = np.ascontiguousarray(codes.reshape(-1, codes.shape[-1]))
    return _bit_counts_2d(flat, bit_width).reshape(lead + (bit_width,))


@njit(cache=True)
def _and_popcount_words(xw, ww):
    b, k = xw.shape
    out = np.zeros(b, dtype=np.int64)
    for i in range(b):
        acc = np.uint64(0)
        for j in range(k):
            acc += _popcount64(xw[i, j] & ww[i, j])
        out[i] = np.int64(acc)
    return out


def and_popcount(x, w):
    x = np.asarray(x)
    lead = x.shape[:-1]
    xw = pack_bits(x.reshape(-1, x.shape[-1]))
    ww = pack_bits(np.asarray(w).reshape(-1, x.shape[-1]))
    return _and_popcount_words(xw, ww).reshape(lead)


@njit(cache=True)
def _cross_counts_words(xw, ww):
    m, p, k = xw.shape
    f, q, _ = ww.shape
    out = np.zeros((m, f, p, q), dtype=np.int64)
    for a in range(m):
        for b in range(f):
            for i in range(p):
                for j in range(q):
                    acc = np.uint64(0)
                    for t in range(k):
                        acc += _popcount64(xw[a, i, t] & ww[b, j, t])
                    out[a, b, i, j] = np.int64(acc)
    return out


def cross_plane_counts(xplanes, wplanes):
    return _cross_counts_words(pack_bits(xplanes), pack_bits(wplanes))


@njit(cache=True)
def _paired_counts_words(xw, ww):
    b, p, k = xw.shape
    q = ww.shape[1]
    out = np.zeros((b, p, q), dtype=np.int64)
    for a in range(b):
        for i in range(p):
            for j in range(q):
                acc = np.uint64(0)
                for t in range(k):
                    acc += _popcount64(xw[a, i, t] & ww[a, j, t])
                out[a, i, j] = np.int64(acc)
    return out


def paired_plane_counts(xplanes, wplanes):
    return _paired_counts_words(pack_bits(xplanes), pack_bits(wplanes))
