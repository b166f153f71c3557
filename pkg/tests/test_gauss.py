import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import eval_hermitenorm, roots_hermitenorm

from hiortho.gauss import (
    GaussianScale,
    IntegrandError,
    OrderCapError,
    density_derivative_ratio,
    hermite_moments,
    hermite_table,
    multivariate_kappa,
    quadrature_expectation,
    quadrature_rule,
)
from hiortho.models.neyman_scott import NeymanScottModel
from hiortho.ortho import generalized_score


def density_ratio_mp(j, y, m, sigma):
    """``d^j/dm^j`` of the normal density over the density, by high-precision differencing."""
    f = lambda mm: mpmath.npdf(y, mm, sigma)  # noqa: E731
    return float(mpmath.diff(f, m, j) / f(m))


def test_scale_validation_and_roundtrip():
    with pytest.raises(ValueError):
        GaussianScale(0.0)
    with pytest.raises(ValueError):
        GaussianScale(-1.0)
    s = GaussianScale.from_log_variance(np.log(2.25))
    assert s.sigma == pytest.approx(1.5, rel=1e-15)
    assert GaussianScale.from_log_variance(s.log_variance).sigma == pytest.approx(s.sigma, rel=1e-15)
    assert s.variance == pytest.approx(2.25, rel=1e-15)


@pytest.mark.parametrize("y", [-1.3, 0.0, 2.7])
def test_ratio_order_zero(y):
    assert density_derivative_ratio(0, y, 0.4, GaussianScale(1.7)) == 1.0


def test_ratio_first_order_at_mean():
    assert density_derivative_ratio(1, 0.3, 0.3, GaussianScale(2.0)) == 0.0


def test_ratio_second_order_one_sd_away():
    assert density_derivative_ratio(2, 1.0, 0.0, GaussianScale(1.0)) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("j", range(0, 7))
@pytest.mark.parametrize("y, m, sigma", [(0.7, -0.2, 0.8), (-1.5, 0.3, 1.9), (2.0, 2.0, 1.0)])
def test_ratio_matches_differentiated_density(j, y, m, sigma):
    got = density_derivative_ratio(j, y, m, GaussianScale(sigma))
    assert got == pytest.approx(density_ratio_mp(j, y, m, sigma), rel=1e-9, abs=1e-9)


def test_order_cap():
    with pytest.raises(OrderCapError):
        density_derivative_ratio(15, 0.0, 0.0, GaussianScale(1.0))
    with pytest.raises(OrderCapError):
        hermite_table(np.zeros(3), 20, cap=14)


def test_hermite_table_against_scipy():
    z = np.linspace(-3, 3, 11)
    H = hermite_table(z, 10)
    for j in range(11):
        np.testing.assert_allclose(H[..., j], eval_hermitenorm(j, z), rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize(
    "j, k, sigma, kappa, rho",
    [(2, 2, 1.0, 2.0, 2.0), (1, 3, 1.0, 0.0, 0.0), (2, 0, 2.0, 0.0, 0.25), (3, 3, 0.5, 6 * 4 ** 3, 0.0)],
)
def test_hermite_moment_examples(j, k, sigma, kappa, rho):
    got_kappa, got_rho = hermite_moments(j, k, GaussianScale(sigma))
    assert got_kappa == pytest.approx(kappa, rel=1e-14)
    assert got_rho == pytest.approx(rho, rel=1e-14)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_hermite_moments_match_independent_quadrature(sigma):
    x, w = roots_hermitenorm(20)
    w = w / w.sum()
    for j in range(7):
        rj = eval_hermitenorm(j, x) / sigma ** j
        score_sigma = (x ** 2 - 1) / sigma
        for k in range(7):
            rk = eval_hermitenorm(k, x) / sigma ** k
            kappa, rho = hermite_moments(j, k, GaussianScale(sigma))
            assert kappa == pytest.approx(np.sum(w * rj * rk), abs=1e-8, rel=1e-10)
            assert rho == pytest.approx(np.sum(w * rj * score_sigma), abs=1e-8)


def test_multivariate_kappa_is_product():
    sig = np.array([0.7, 1.3])
    assert multivariate_kappa((2, 1), (2, 1), sig) == pytest.approx(2 / 0.7 ** 4 * 1 / 1.3 ** 2)
    assert multivariate_kappa((2, 1), (1, 2), sig) == 0.0


@pytest.mark.parametrize("dim", [1, 2, 3, 4])
def test_quadrature_rule_moments(dim):
    rule = quadrature_rule(dim)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(rule.weights > 0)
    np.testing.assert_allclose(rule.weights @ rule.nodes, 0.0, atol=1e-12)
    np.testing.assert_allclose(rule.weights @ rule.nodes ** 2, 1.0, atol=1e-10)


def test_quadrature_dimension_guard():
    with pytest.raises(ValueError):
        quadrature_rule(5)
    with pytest.raises(ValueError):
        quadrature_expectation(lambda y: y, [0.0, 0.0], [1.0], quadrature_rule(2))


def test_quadrature_constant_and_variance():
    rule = quadrature_rule(1)
    assert quadrature_expectation(lambda y: 1.0, [0.3], [GaussianScale(3.0)], rule) == pytest.approx(1.0, abs=1e-12)
    var = quadrature_expectation(lambda y: (y[0] - 0.3) ** 2, [0.3], [3.0], rule)
    assert var == pytest.approx(9.0, abs=1e-8)


def test_quadrature_names_failing_node():
    def f(y):
        return np.nan if y[0] > 1.0 else 1.0

    with pytest.raises(IntegrandError, match="node"):
        quadrature_expectation(f, [0.0], [1.0], quadrature_rule(1))


def test_neyman_scott_basis_cross_moment_vanishes():
    model = NeymanScottModel(3)
    theta, eta = [1.0], np.array([[0.4]])
    rule = quadrature_rule(3)

    def f(y):
        w = generalized_score(model, np.asarray(y)[None, :], theta, eta, 2)[0]
        return np.array([w[0] * w[1]])

    assert abs(quadrature_expectation(f, model.mean(theta, eta)[0], model.scales(theta), rule)[0]) < 1e-8


@given(st.integers(0, 6), st.integers(0, 6), st.floats(0.3, 3.0))
def test_kappa_symmetry_and_sign(j, k, sigma):
    a, _ = hermite_moments(j, k, GaussianScale(sigma))
    b, _ = hermite_moments(k, j, GaussianScale(sigma))
    assert a == b
    assert a >= 0
    if j == k:
        assert a == pytest.approx(math.factorial(j) / sigma ** (2 * j))
