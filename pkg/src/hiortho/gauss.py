"""Gaussian density-derivative ratios, their moments, and a quadrature oracle.

For ``l(y | m, sigma)`` the normal density, the ratio of its ``j``-th
derivative in the mean to the density itself is a probabilists' Hermite
polynomial in the standardized residual::

    d^j l / dm^j / l = He_j(z) / sigma**j,   z = (y - m) / sigma.

The Hermite orthogonality relation then gives every second moment of these
ratios in closed form, which is what the orthogonalization engine uses.  The
tensor Gauss-Hermite rule here is only used to check those closed forms.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import hermite_e

DEFAULT_ORDER_CAP = 14
DEFAULT_NODES = 20
MAX_QUADRATURE_DIM = 4


class OrderCapError(ValueError):
    """Requested derivative order exceeds the configured cap."""


class IntegrandError(FloatingPointError):
    """An integrand returned a non-finite value at a quadrature node."""


@dataclass(frozen=True)
class GaussianScale:
    """Standard deviation of a Gaussian error, stored directly."""

    sigma: float

    def __post_init__(self):
        s = float(self.sigma)
        if not np.isfinite(s) or s <= 0:
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        object.__setattr__(self, "sigma", s)

    @classmethod
    def from_log_variance(cls, log_var: float) -> "GaussianScale":
        return cls(math.exp(0.5 * float(log_var)))

    @property
    def variance(self) -> float:
        return self.sigma ** 2

    @property
    def log_variance(self) -> float:
        return 2.0 * math.log(self.sigma)


def _sigma(scale) -> float:
    return scale.sigma if isinstance(scale, GaussianScale) else float(scale)


def hermite_table(z, order: int, cap: int = DEFAULT_ORDER_CAP) -> np.ndarray:
    """Values ``He_0(z), ..., He_order(z)`` stacked on a new last axis.

    Uses ``He_{j+1}(z) = z He_j(z) - j He_{j-1}(z)``, the three-term form of
    ``h_{j+1} = z h_j - h_j'``.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    if order > cap:
        raise OrderCapError(f"derivative order {order} exceeds cap {cap}")
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape + (order + 1,))
    out[..., 0] = 1.0
    if order >= 1:
        out[..., 1] = z
    for j in range(1, order):
        out[..., j + 1] = z * out[..., j] - j * out[..., j - 1]
    return out


def density_derivative_ratio(j: int, y, m, scale, cap: int = DEFAULT_ORDER_CAP):
    """``(d^j / dm^j) l(y | m, sigma) / l(y | m, sigma)`` for the normal density.

    Parameters
    ----------
    j : int
        Derivative order, ``0 <= j <= cap``.
    y, m : float or array_like
        Outcome and mean; broadcast together.
    scale : GaussianScale or float
        Standard deviation.
    """
    sigma = _sigma(scale)
    z = (np.asarray(y, dtype=float) - np.asarray(m, dtype=float)) / sigma
    values = hermite_table(z, j, cap)[..., j] / sigma ** j
    return values if values.ndim else float(values)


def hermite_moments(j: int, k: int, scale, cap: int = DEFAULT_ORDER_CAP) -> tuple[float, float]:
    """Second moments of the derivative ratios.

    Returns
    -------
    kappa : float
        ``E[ratio_j * ratio_k] = 1{j == k} j! / sigma**(2j)``.
    rho : float
        ``E[ratio_j * d log l / d sigma] = 1{j == 2} * 2 / sigma**3``.
    """
    if max(j, k) > cap:
        raise OrderCapError(f"derivative order {max(j, k)} exceeds cap {cap}")
    if min(j, k) < 0:
        raise ValueError("orders must be non-negative")
    sigma = _sigma(scale)
    kappa = math.factorial(j) / sigma ** (2 * j) if j == k else 0.0
    rho = 2.0 / sigma ** 3 if j == 2 else 0.0
    return kappa, rho


def multivariate_ratio(exponents, y, m, sigmas, cap: int = DEFAULT_ORDER_CAP):
    """Product over independent coordinates of the univariate ratios.

    ``exponents[i]`` is the number of derivatives taken in ``m_i``.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m = np.atleast_1d(np.asarray(m, dtype=float))
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    value = np.ones(np.broadcast_shapes(y.shape, m.shape)[:-1])
    for i, e in enumerate(exponents):
        if e:
            value = value * density_derivative_ratio(e, y[..., i], m[..., i], sigmas[i], cap)
    return value


def multivariate_kappa(exp_a, exp_b, sigmas) -> float:
    """``E[ratio_a * ratio_b]`` for independent coordinates."""
    if tuple(exp_a) != tuple(exp_b):
        return 0.0
    out = 1.0
    for e, s in zip(exp_a, sigmas):
        out *= math.factorial(e) / float(s) ** (2 * e)
    return out


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss-Hermite rule for the standard normal, weights sum to 1."""

    nodes_per_dim: int
    dimension: int
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def _rule(nodes_per_dim: int, dimension: int) -> QuadratureRule:
    x, w = hermite_e.hermegauss(nodes_per_dim)
    w = w / w.sum()
    grid = np.array(list(itertools.product(x, repeat=dimension)))
    weights = np.array([np.prod(c) for c in itertools.product(w, repeat=dimension)])
    weights = weights / weights.sum()
    grid.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes_per_dim, dimension, grid, weights)


def quadrature_rule(dimension: int, nodes_per_dim: int = DEFAULT_NODES) -> QuadratureRule:
    if nodes_per_dim < 2:
        raise ValueError("need at least 2 nodes per dimension")
    if not 1 <= dimension <= MAX_QUADRATURE_DIM:
        raise ValueError(f"quadrature dimension must be in 1..{MAX_QUADRATURE_DIM}, got {dimension}")
    return _rule(int(nodes_per_dim), int(dimension))


def quadrature_nodes(mean, scales, rule: QuadratureRule) -> np.ndarray:
    """Outcome values ``mean + scales * nodes`` for every node, shape (K, d)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sig = np.atleast_1d(np.asarray([_sigma(s) for s in np.atleast_1d(scales)], dtype=float))
    if mean.shape[0] != rule.dimension or sig.shape[0] != rule.dimension:
        raise ValueError(
            f"dimension mismatch: mean {mean.shape[0]}, scales {sig.shape[0]}, rule {rule.dimension}"
        )
    return mean + sig * rule.nodes


def quadrature_expectation(f, mean, scales, rule: QuadratureRule, vectorized: bool = False):
    """``E[f(Y)]`` for ``Y ~ N(mean, diag(scales**2))``.

    ``f`` maps one outcome vector to a scalar or array.  With
    ``vectorized=True`` it receives all nodes at once, shape (K, d), and must
    return a leading axis of length K.
    """
    ys = quadrature_nodes(mean, scales, rule)
    if vectorized:
        vals = np.asarray(f(ys), dtype=float)
    else:
        vals = np.array([np.asarray(f(y), dtype=float) for y in ys])
    bad = ~np.isfinite(vals.reshape(len(ys), -1)).all(axis=1)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise IntegrandError(f"non-finite integrand at quadrature node {k}: y={ys[k].tolist()}")
    return np.tensordot(rule.weights, vals, axes=(0, 0))
