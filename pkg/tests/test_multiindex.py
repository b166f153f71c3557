import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiortho.multiindex import (
    IndexFamily,
    MultiIndex,
    block_size,
    enumerate_indices,
    factorial_weight,
    family_size,
)
from oracles import brute_force_indices


def labels(fam):
    return [m.entries for m in fam]


def test_scalar_two_orders():
    fam = enumerate_indices(1, 2)
    assert labels(fam) == [(0,), (0, 0)]
    assert fam.block_sizes == (1, 1)


def test_two_dims_two_orders():
    fam = enumerate_indices(2, 2)
    assert labels(fam) == [(0,), (1,), (0, 0), (0, 1), (1, 1)]
    assert fam.block_sizes == (2, 3)


def test_three_dims_three_orders_length():
    assert len(enumerate_indices(3, 3)) == 3 + 6 + 10


@pytest.mark.parametrize("d_eta", [1, 2, 3, 4])
@pytest.mark.parametrize("q", [1, 2, 3, 4, 5, 6])
def test_matches_brute_force(d_eta, q):
    fam = enumerate_indices(d_eta, q)
    assert labels(fam) == brute_force_indices(d_eta, q)
    assert len(fam) == sum(math.comb(d_eta + p - 1, p) for p in range(1, q + 1))
    assert family_size(d_eta, q) == len(fam)
    assert len(set(labels(fam))) == len(fam)


@pytest.mark.parametrize("bad", [(0, 2), (2, 0), (-1, 1)])
def test_rejects_nonpositive(bad):
    with pytest.raises(ValueError):
        enumerate_indices(*bad)


def test_rejects_non_integer():
    with pytest.raises(TypeError):
        enumerate_indices(1.5, 2)


@pytest.mark.parametrize(
    "entries, expected",
    [((0,), 1), ((0, 0), 2), ((0, 0, 1), 2), ((1, 1, 1), 6), ((0, 0, 1, 1), 4)],
)
def test_factorial_weight(entries, expected):
    assert factorial_weight(MultiIndex(entries)) == expected


def test_multiindex_validation():
    with pytest.raises(ValueError):
        MultiIndex((1, 0))
    with pytest.raises(ValueError):
        MultiIndex((-1,))


def test_exponent_roundtrip_and_range():
    m = MultiIndex((0, 2, 2))
    assert m.exponents(3) == (1, 0, 2)
    assert MultiIndex.from_exponents((1, 0, 2)) == m
    with pytest.raises(ValueError):
        m.exponents(2)


def test_blocks_and_positions():
    fam = enumerate_indices(2, 3)
    assert [len(fam.indices[fam.block(p)]) for p in (1, 2, 3)] == [block_size(2, p) for p in (1, 2, 3)]
    for k, m in enumerate(fam):
        assert fam.index_of(m) == k
        assert fam.index_of(m.entries) == k
    assert fam.orders() == [1, 1, 2, 2, 2, 3, 3, 3, 3]
    assert isinstance(fam, IndexFamily)


@given(st.integers(1, 4), st.integers(1, 5))
def test_pure_and_graded(d_eta, q):
    a, b = enumerate_indices(d_eta, q), enumerate_indices(d_eta, q)
    assert labels(a) == labels(b)
    orders = a.orders()
    assert orders == sorted(orders)
    for p in range(1, q + 1):
        block = labels(a)[a.block(p)]
        assert block == sorted(block)
        assert all(len(m) == p for m in block)
        assert len(block) == math.comb(d_eta + p - 1, p)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=6))
def test_factorial_weight_counts(raw):
    m = MultiIndex(tuple(sorted(raw)))
    expected = 1
    for c in set(raw):
        expected *= math.factorial(raw.count(c))
    assert factorial_weight(m) == expected
