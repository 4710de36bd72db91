import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pacsim.bitplane import (BitPlanes, QuantTensor, SparsityVector, count_codes, count_sparsity, decompose,
                             recompose, round_half_away)
from pacsim.errors import MalformedPlaneError, MalformedTensorError, PacsimError


@given(arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(1, 40))))
def test_decompose_roundtrip(codes):
    b = decompose(QuantTensor(codes))
    assert b.planes.shape == (8,) + codes.shape
    np.testing.assert_array_equal(recompose(b), codes)


@given(st.integers(1, 8), st.data())
def test_roundtrip_any_width(bw, data):
    codes = data.draw(arrays(np.int64, st.integers(1, 30), elements=st.integers(0, 2**bw - 1)))
    np.testing.assert_array_equal(recompose(decompose(codes, bw)), codes)


def test_sparsity_weighted_sum_recovers_total():
    rng = np.random.default_rng(0)
    codes = rng.integers(0, 256, size=(5, 300))
    sv = count_sparsity(decompose(codes))
    assert sv.counts.shape == (5, 8)
    np.testing.assert_array_equal(sv.weighted_sum(), codes.sum(axis=1))
    np.testing.assert_array_equal(count_codes(codes).counts, sv.counts)


def test_group_axis():
    codes = np.arange(24).reshape(4, 6)
    a = count_sparsity(decompose(codes), group_axis=0)
    assert a.group_len == 4 and a.counts.shape == (6, 8)
    np.testing.assert_array_equal(a.weighted_sum(), codes.sum(axis=0))


def test_known_counts():
    sv = count_sparsity(decompose(np.array([0, 1, 3, 255])))
    assert sv.counts.tolist() == [3, 2, 1, 1, 1, 1, 1, 1]
    assert count_sparsity(decompose(np.zeros(9, dtype=int))).counts.tolist() == [0] * 8


def test_quantize_and_dequantize():
    t = QuantTensor.quantize(np.array([-1.0, 0.0, 0.5, 10.0]), 0.01, 128)
    assert t.values.tolist() == [28, 128, 178, 255]
    np.testing.assert_allclose(t.dequantize(), [-1.0, 0.0, 0.5, 1.27])


def test_round_half_away():
    assert round_half_away(np.array([0.5, 1.5, -0.5, -2.5, 2.4])).tolist() == [1, 2, -1, -3, 2]


@pytest.mark.parametrize("values", [[256], [-1], [1.5], [[0, 300]]])
def test_malformed_tensor(values):
    with pytest.raises(MalformedTensorError):
        QuantTensor(np.array(values))


def test_malformed_params():
    with pytest.raises(PacsimError):
        QuantTensor(np.array([1]), bit_width=9)
    with pytest.raises(PacsimError):
        QuantTensor(np.array([1]), scale=0.0)
    with pytest.raises(MalformedTensorError):
        QuantTensor(np.array([9]), bit_width=3)


def test_malformed_planes():
    with pytest.raises(MalformedPlaneError):
        BitPlanes(np.array([[0, 2]]), 1)
    with pytest.raises(MalformedPlaneError):
        BitPlanes(np.zeros((3, 4)), 8)


def test_sparsity_vector_bounds():
    with pytest.raises(PacsimError):
        SparsityVector(np.array([5, 0]), 2, 4)
    with pytest.raises(PacsimError):
        count_sparsity(decompose(np.zeros((3, 0), dtype=int)))


def test_tensor_is_immutable():
    t = QuantTensor(np.array([1, 2]))
    with pytest.raises(ValueError):
        t.values[0] = 3
