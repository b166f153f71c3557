import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiortho.chainrule import (
    IncompleteDerivativesError,
    MeanDerivatives,
    block_lower_triangular,
    faa_di_bruno_matrix,
)
from hiortho.models.ces import ces_log_aggregate, ces_log_aggregate_derivatives
from hiortho.multiindex import enumerate_indices
from oracles import faa_di_bruno_by_partitions, mp_partial

MEAN_MAPS = {
    "poly": (
        1,
        [lambda x: 1 + x + 0.5 * x ** 2 - 0.3 * x ** 3],
    ),
    "trig-exp": (
        2,
        [lambda x, y: mpmath.sin(x) + x * y ** 2, lambda x, y: mpmath.exp(x - 0.5 * y)],
    ),
    "ces-log": (
        2,
        [lambda x, y: mpmath.log((mpmath.exp(0.7 * x) + mpmath.exp(0.7 * y)) / 2) / 0.7],
    ),
}


def mean_derivatives_from(maps, d_eta, point, q):
    fam = enumerate_indices(d_eta, q)
    value = [float(f(*point)) for f in maps]
    derivs = np.array([[mp_partial(f, point, m.entries) for m in fam] for f in maps])
    return MeanDerivatives(d_eta, q, np.array(value)[None], derivs[None])


@pytest.mark.parametrize("name", sorted(MEAN_MAPS))
@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_matches_partition_oracle(name, q):
    d_eta, maps = MEAN_MAPS[name]
    point = (0.3, -0.4)[:d_eta]
    md = mean_derivatives_from(maps, d_eta, point, q)
    M = faa_di_bruno_matrix(md)[0]
    fam_eta = enumerate_indices(d_eta, q)
    fam_out = enumerate_indices(len(maps), q)

    def mean_deriv(i, labels):
        return md.derivs[0, i, fam_eta.index_of(labels)]

    for r, nu in enumerate(fam_eta):
        ref = faa_di_bruno_by_partitions(nu.entries, len(maps), mean_deriv)
        expected = np.zeros(len(fam_out))
        for lam, c in ref.items():
            expected[fam_out.index_of(lam)] += c
        np.testing.assert_allclose(M[r], expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", sorted(MEAN_MAPS))
@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_composite_derivatives_by_differencing(name, q):
    d_eta, maps = MEAN_MAPS[name]
    point = (0.3, -0.4)[:d_eta]
    c = [0.8, -0.6][: len(maps)]
    md = mean_derivatives_from(maps, d_eta, point, q)
    M = faa_di_bruno_matrix(md)[0]
    outer_base = math.exp(sum(ci * float(f(*point)) for ci, f in zip(c, maps)))
    fam_out = enumerate_indices(len(maps), q)
    outer = np.array([outer_base * math.prod(c[i] for i in lam.entries) for lam in fam_out])

    def composite(*x):
        return mpmath.exp(sum(ci * f(*x) for ci, f in zip(c, maps)))

    for r, nu in enumerate(enumerate_indices(d_eta, q)):
        assert M[r] @ outer == pytest.approx(mp_partial(composite, point, nu.entries), rel=1e-10, abs=1e-12)


def test_scalar_third_order_formula():
    g1, g2, g3 = 0.7, -1.1, 2.3
    md = MeanDerivatives(1, 3, [[0.0]], [[[g1, g2, g3]]])
    M = faa_di_bruno_matrix(md)[0]
    expected = np.array(
        [
            [g1, 0, 0],
            [g2, g1 ** 2, 0],
            [g3, 3 * g1 * g2, g1 ** 3],
        ]
    )
    np.testing.assert_allclose(M, expected, rtol=1e-15)


def test_identity_map_gives_identity():
    fam = enumerate_indices(2, 3)
    derivs = np.zeros((1, 2, len(fam)))
    derivs[0, 0, 0] = derivs[0, 1, 1] = 1.0
    M = faa_di_bruno_matrix(MeanDerivatives(2, 3, np.zeros((1, 2)), derivs))[0]
    np.testing.assert_allclose(M, np.eye(len(fam)), atol=0)


def test_missing_derivatives_are_named():
    with pytest.raises(IncompleteDerivativesError, match=r"\(1, 1\)"):
        MeanDerivatives(2, 2, np.zeros((1, 1)), np.zeros((1, 1, 4)))
    with pytest.raises(IncompleteDerivativesError, match="missing"):
        MeanDerivatives.from_mapping(1, 2, [0.0], {(0, (0,)): 1.0})
    md = MeanDerivatives(1, 1, [[0.0]], [[[1.0]]])
    with pytest.raises(IncompleteDerivativesError):
        faa_di_bruno_matrix(md, 2)


def test_lower_order_uses_leading_blocks():
    d_eta, maps = MEAN_MAPS["trig-exp"]
    md = mean_derivatives_from(maps, d_eta, (0.3, -0.4), 3)
    full = faa_di_bruno_matrix(md)[0]
    low = faa_di_bruno_matrix(md, 2)[0]
    np.testing.assert_allclose(low, full[:5, :5], rtol=0, atol=0)


def test_ces_log_aggregate_derivatives_match_differencing():
    gamma = -0.6
    point = (0.4, -0.9)
    fam = enumerate_indices(2, 4)
    got = ces_log_aggregate_derivatives(np.array([point]), gamma, 4)[0]

    def F(x, y):
        return mpmath.log((mpmath.exp(gamma * x) + mpmath.exp(gamma * y)) / 2) / gamma

    expected = [mp_partial(F, point, m.entries) for m in fam]
    np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-12)
    assert ces_log_aggregate(np.array([point]), gamma)[0] == pytest.approx(float(F(*point)), rel=1e-14)


@given(
    st.integers(1, 3),
    st.integers(1, 3),
    st.integers(1, 4),
    st.integers(1, 5),
    st.integers(0, 2 ** 31 - 1),
)
def test_block_structure_and_batching(d_eta, d_out, q, n, seed):
    rng = np.random.default_rng(seed)
    k = len(enumerate_indices(d_eta, q))
    md = MeanDerivatives(d_eta, q, rng.normal(size=(n, d_out)), rng.normal(size=(n, d_out, k)))
    M = faa_di_bruno_matrix(md)
    assert M.shape == (n, k, len(enumerate_indices(d_out, q)))
    assert block_lower_triangular(M, d_eta, d_out, q)
    single = faa_di_bruno_matrix(MeanDerivatives(d_eta, q, md.value[-1:], md.derivs[-1:]))
    np.testing.assert_allclose(M[-1:], single, rtol=1e-14, atol=1e-14)
