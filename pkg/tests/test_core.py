import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import vectors
from mlmc_compress.core import (
    LEVEL,
    NOISE,
    BitPlane,
    DimensionError,
    FloatPlane,
    QuantizedGrid,
    ResidualMessage,
    Rng,
    SparseDelta,
    ZeroMessage,
    as_gradient,
    ceil_log2,
    dot,
    norms,
    sample_categorical,
)


def test_dot_examples():
    assert dot([1, 2], [3, 4]) == 11
    v = np.array([0.3, -1.7, 2.2])
    assert dot(v, np.zeros(3)) == 0
    e = np.eye(5)[2]
    assert dot(e, e) == 1


def test_dot_dimension_mismatch():
    with pytest.raises(DimensionError):
        dot([1, 2], [1, 2, 3])


@given(vectors(), vectors())
def test_dot_sums_products_exactly(a, b):
    # products are rounded once each; their sum is then correctly rounded
    n = min(a.size, b.size)
    a, b = a[:n], b[:n]
    exact = sum((Fraction(x * y) for x, y in zip(a.tolist(), b.tolist())), Fraction(0))
    assert dot(a, b) == float(exact)


def test_norms_examples():
    assert norms([3, -4]) == (7, 25)
    assert norms(np.zeros(4)) == (0, 0)
    assert norms([0.5]) == (0.5, 0.25)


@given(vectors())
def test_norms_repeatable(v):
    assert norms(v) == norms(v.copy())
    assert norms(v[::-1]) == norms(v)  # order independence follows from exact rounding


def test_as_gradient_rejects_bad_input():
    with pytest.raises(DimensionError):
        as_gradient([])
    with pytest.raises(DimensionError):
        as_gradient([[1.0, 2.0]])
    with pytest.raises(ValueError):
        as_gradient([1.0, math.nan])
    with pytest.raises(ValueError):
        as_gradient([math.inf])


@pytest.mark.parametrize("n, bits", [(1, 0), (2, 1), (3, 2), (52, 6), (63, 6), (64, 6), (65, 7), (1000, 10)])
def test_ceil_log2(n, bits):
    assert ceil_log2(n) == bits
    assert n <= 2**bits


def test_rng_streams_replay_independently():
    a = Rng(7, worker=3, iteration=11).random(5)
    Rng(7, worker=0, iteration=0).random(1000)  # unrelated stream in between
    b = Rng(7, worker=3, iteration=11).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, Rng(7, worker=4, iteration=11).random(5))
    assert not np.array_equal(a, Rng(7, worker=3, iteration=12).random(5))
    assert not np.array_equal(Rng(7, 3, 11, NOISE).random(5), Rng(7, 3, 11, LEVEL).random(5))


def test_categorical_degenerate():
    for i in range(50):
        assert sample_categorical(Rng(i), [1.0]) == 1


def test_categorical_zero_entry_never_drawn():
    draws = {sample_categorical(Rng(0, 0, i), [0.3, 0.0, 0.7, 0.0]) for i in range(2000)}
    assert draws == {1, 3}


def test_categorical_fair_coin_frequency():
    # vectorized equivalent of one Rng per draw: same inverse-CDF rule
    n = 10**6
    u = np.random.Generator(np.random.Philox(key=[99, LEVEL])).random(n)
    levels = np.searchsorted(np.cumsum([0.5, 0.5]), u, side="right") + 1
    freq = np.mean(levels == 1)
    assert 0.497 <= freq <= 0.503
    freq_small = np.mean([sample_categorical(Rng(99, 0, i), [0.5, 0.5]) == 1 for i in range(20000)])
    assert abs(freq_small - 0.5) < 6 * 0.5 / math.sqrt(20000)


def test_categorical_rejects_unnormalized():
    with pytest.raises(ValueError):
        sample_categorical(Rng(0), [0.5, 0.6])
    with pytest.raises(ValueError):
        sample_categorical(Rng(0), [1.2, -0.2])


@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=12).filter(lambda w: sum(w) > 0),
       st.integers(0, 2**32))
def test_categorical_only_positive_levels(weights, seed):
    p = np.array(weights) / math.fsum(weights)
    if abs(math.fsum(p.tolist()) - 1) > 1e-12:
        return
    l = sample_categorical(Rng(seed), p)
    assert 1 <= l <= p.size and p[l - 1] > 0


def test_sparse_delta_invariants():
    s = SparseDelta.from_entries([3, 0, 2], [1.0, -2.0, 0.0], 5)
    assert s.indices.tolist() == [0, 3]
    assert s.values.tolist() == [-2.0, 1.0]
    assert s.densify().tolist() == [-2.0, 0, 0, 1.0, 0]
    with pytest.raises(ValueError):
        SparseDelta(np.array([1, 1]), np.array([1.0, 2.0]), 3)
    with pytest.raises(ValueError):
        SparseDelta(np.array([0]), np.array([0.0]), 3)
    with pytest.raises(ValueError):
        SparseDelta(np.array([3]), np.array([1.0]), 3)


def test_bitplane_layout():
    plane = BitPlane(level=2, signs=np.array([False, True]), bits=np.array([True, True]), scale=1.0)
    assert plane.densify().tolist() == [0.25, -0.25]
    wire = plane.serialize()
    assert len(wire) == 6 + 64 + 2 * 2
    assert wire[:6] == "000010"
    assert wire[6:70] == format(np.float64(1.0).view(np.uint64).item(), "064b")
    assert wire[70:] == "0111"


def test_float_plane_decodes_with_entry_exponent():
    # 6.0 = 1.1b * 2^2: mantissa bit 1 is set, worth 2^2 * 2^-1
    plane = FloatPlane(level=1, signs=np.array([True]), exponents=np.array([1025]), bits=np.array([True]))
    assert plane.densify().tolist() == [-2.0]
    assert plane.base().tolist() == [-4.0]


def test_quantized_grid_difference():
    g = QuantizedGrid(level=2, codes=np.array([1, -1]), step=2 / 3, prev_codes=np.array([0, 0]), prev_step=2.0)
    assert np.allclose(g.densify(), [2 / 3, -2 / 3])


def test_residual_message_prob_range():
    ResidualMessage(ZeroMessage(3), level=0, prob=1.0)
    for p in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            ResidualMessage(ZeroMessage(3), level=1, prob=p)
