from fractions import Fraction
from math import floor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pacsim.bitplane import SparsityVector, count_codes, decompose
from pacsim.errors import PacsimError, ShapeMismatchError
from pacsim.pac import (CycleMap, Domain, Thresholds, configure_cycles, demotion_order, dynamic_masks,
                        exact_binary_mac, exact_mac, hybrid_mac, pac_estimate, pac_mac, speculate)

TH = Thresholds(0.1, 0.2, 0.3)


def hybrid_oracle(x, w, det):
    """Plain-loop hybrid MAC with exact rational approximate part."""
    n = len(x)
    xb = [[(int(v) >> p) & 1 for v in x] for p in range(8)]
    wb = [[(int(v) >> q) & 1 for v in w] for q in range(8)]
    d, a = 0, Fraction(0)
    for p in range(8):
        for q in range(8):
            if det[p][q]:
                d += (1 << (p + q)) * sum(i * j for i, j in zip(xb[p], wb[q]))
            else:
                a += (1 << (p + q)) * Fraction(sum(xb[p]) * sum(wb[q]), n)
    return d + floor(a + Fraction(1, 2))


codes = st.integers(1, 80).flatmap(
    lambda n: st.tuples(arrays(np.int64, n, elements=st.integers(0, 255)),
                        arrays(np.int64, n, elements=st.integers(0, 255))))


@given(codes)
def test_exact_mac_is_dot(pair):
    x, w = pair
    assert exact_mac(decompose(x), decompose(w)) == int(np.dot(x, w))


@given(codes, st.integers(0, 8))
def test_hybrid_matches_oracle(pair, k):
    x, w = pair
    cmap = CycleMap.static(8, 8, k)
    assert hybrid_mac(decompose(x), decompose(w), cmap) == hybrid_oracle(x, w, cmap.deterministic)


@given(codes)
def test_hybrid_extremes(pair):
    x, w = pair
    bx, bw = decompose(x), decompose(w)
    assert hybrid_mac(bx, bw, CycleMap.all_deterministic()) == int(np.dot(x, w))
    assert pac_mac(bx, bw) == hybrid_oracle(x, w, np.zeros((8, 8), bool))


def test_batched_mac():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 256, size=(3, 4, 50))
    w = rng.integers(0, 256, size=(3, 4, 50))
    np.testing.assert_array_equal(exact_mac(decompose(x), decompose(w)), np.einsum("abn,abn->ab", x, w))
    got = hybrid_mac(decompose(x), decompose(w), CycleMap.static())
    want = [[hybrid_oracle(x[i, j], w[i, j], CycleMap.static().deterministic) for j in range(4)] for i in range(3)]
    np.testing.assert_array_equal(got, want)


def test_chunked_hybrid():
    rng = np.random.default_rng(2)
    x, w = rng.integers(0, 256, 100), rng.integers(0, 256, 100)
    bx, bw, cmap = decompose(x), decompose(w), CycleMap.static()
    assert hybrid_mac(bx, bw, cmap, chunk_size=100) == hybrid_mac(bx, bw, cmap)
    # chunk estimates are summed exactly and rounded once
    det = sum((1 << (p + q)) * int((((x >> p) & 1) * ((w >> q) & 1)).sum())
              for p in range(8) for q in range(8) if cmap.deterministic[p, q])
    a = Fraction(0)
    for s in range(0, 100, 30):
        xs, ws = x[s:s + 30], w[s:s + 30]
        a += sum((1 << (p + q)) * Fraction(int(((xs >> p) & 1).sum()) * int(((ws >> q) & 1).sum()), len(xs))
                 for p in range(8) for q in range(8) if not cmap.deterministic[p, q])
    assert hybrid_mac(bx, bw, cmap, chunk_size=30) == det + floor(a + Fraction(1, 2))
    with pytest.raises(PacsimError):
        hybrid_mac(bx, bw, cmap, chunk_size=0)


def test_rounding_half_away():
    # one approximate cell at (0, 0) with S_x = S_w = 1, n = 2 -> 0.5 rounds to 1
    x = decompose(np.array([1, 0]))
    w = decompose(np.array([1, 0]))
    det = np.ones((8, 8), bool)
    det[0, 0] = False
    assert hybrid_mac(x, w, CycleMap(det)) == 1
    assert pac_estimate(1, 1, 2) == Fraction(1, 2)


def test_binary_mac_and_estimate():
    assert exact_binary_mac([1, 0, 1, 1], [1, 1, 0, 1]) == 2
    assert pac_estimate(205, 410, 1024) == Fraction(205 * 410, 1024)
    assert pac_estimate(0, 7, 9) == 0
    with pytest.raises(ShapeMismatchError):
        exact_binary_mac([1, 0], [1])
    with pytest.raises(PacsimError):
        pac_estimate(5, 1, 4)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        exact_mac(decompose(np.zeros(3, int)), decompose(np.zeros(4, int)))
    with pytest.raises(ShapeMismatchError):
        hybrid_mac(decompose(np.zeros(3, int)), decompose(np.zeros(3, int), 4), CycleMap.static())


def test_static_map():
    m = CycleMap.static(8, 8, 4)
    assert m.n_deterministic == 16
    assert m[7, 7] is Domain.DETERMINISTIC and m[3, 7] is Domain.APPROXIMATE
    assert CycleMap.static(8, 8, 0) == CycleMap.all_deterministic()
    assert CycleMap.static(8, 8, 8) == CycleMap.all_approximate()
    with pytest.raises(PacsimError):
        CycleMap.static(8, 8, 9)


def test_demotion_order():
    assert demotion_order(CycleMap.static())[:6] == [(4, 4), (5, 4), (4, 5), (6, 4), (5, 5), (4, 6)]


@pytest.mark.parametrize("spec,cells", [(0.0, 10), (0.1, 10), (0.15, 12), (0.2, 12), (0.25, 14), (0.31, 16), (1.0, 16)])
def test_configure_cycles(spec, cells):
    assert configure_cycles(spec, TH, CycleMap.static()).n_deterministic == cells


def test_configure_keeps_msb_cells():
    m = configure_cycles(0.0, TH, CycleMap.static())
    for cell in [(4, 4), (5, 4), (4, 5), (6, 4), (5, 5), (4, 6)]:
        assert m[cell] is Domain.APPROXIMATE
    assert m[7, 7] is Domain.DETERMINISTIC


def test_zero_thresholds_keep_everything():
    masks = dynamic_masks(np.linspace(0.001, 1, 50), Thresholds(0, 0, 0), CycleMap.static())
    assert (masks.sum(axis=(-2, -1)) == 16).all()


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30))
def test_cells_monotone_in_spec(specs):
    specs = np.sort(np.array(specs))
    cells = dynamic_masks(specs, TH, CycleMap.static()).sum(axis=(-2, -1))
    assert (np.diff(cells) >= 0).all()
    assert set(cells.tolist()) <= {10, 12, 14, 16}


def test_thresholds_validation():
    assert Thresholds.parse("0.1,0.2,0.3").as_tuple() == (0.1, 0.2, 0.3)
    for bad in ("0.3,0.2,0.1", "0.1,0.2", "-0.1,0.2,0.3", "0.1,0.2,1.5"):
        with pytest.raises((PacsimError, ValueError)):
            Thresholds.parse(bad)
    with pytest.raises(PacsimError):
        configure_cycles(1.5, TH, CycleMap.static())


def test_speculate():
    sv = SparsityVector(np.array([4, 4, 4, 4, 4, 4, 4, 4]), 8, 4)
    assert speculate(sv) == 1.0
    x = np.array([0, 255, 51, 0])
    assert speculate(count_codes(x)) == pytest.approx(306 / (4 * 255))
