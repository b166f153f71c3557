"""Gaussian regression models with unit-specific nuisance parameters.

A model fixes the covariates of one unit type and exposes, for a batch of
nuisance values ``eta`` of shape (N, d_eta),

* the mean ``m(theta, eta)`` of the ``d_out`` outcomes and its
  eta-derivatives up to any order,
* the theta-Jacobian of the mean and of the log-variances,
* diagonal error scales ``sigma(theta)``.

Errors are independent across outcomes, which is what lets the engine use
products of univariate Hermite moments.
"""
from __future__ import annotations

import numpy as np

from ..chainrule import MeanDerivatives
from ..multiindex import enumerate_indices


class GaussianRegressionModel:
    """Abstract base for ``Y = m(theta, eta) + sigma(theta) * eps``."""

    d_eta: int
    d_out: int
    n_theta: int
    theta_names: tuple[str, ...] = ()

    # -- required ---------------------------------------------------------
    def mean(self, theta, eta) -> np.ndarray:
        """Mean of the outcomes, shape (N, d_out)."""
        raise NotImplementedError

    def mean_eta_derivatives(self, theta, eta, q: int) -> np.ndarray:
        """Stacked ``D^m m_i`` for ``|m| <= q``, shape (N, d_out, k_q)."""
        raise NotImplementedError

    def scales(self, theta) -> np.ndarray:
        """Standard deviations, shape (d_out,)."""
        raise NotImplementedError

    def mean_theta_jacobian(self, theta, eta) -> np.ndarray:
        """``d m_i / d theta_k``, shape (N, d_out, n_theta)."""
        raise NotImplementedError

    def log_variance_jacobian(self, theta) -> np.ndarray:
        """``d log sigma_i^2 / d theta_k``, shape (d_out, n_theta)."""
        raise NotImplementedError

    # -- derived ----------------------------------------------------------
    def mean_derivatives(self, theta, eta, q: int) -> MeanDerivatives:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        return MeanDerivatives(self.d_eta, q, self.mean(theta, eta), self.mean_eta_derivatives(theta, eta, q))

    def broadcast_scales(self, theta, n: int) -> np.ndarray:
        sig = np.asarray(self.scales(theta), dtype=float)
        return np.broadcast_to(sig, (n, self.d_out)).copy()

    def log_density(self, y, theta, eta) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        m = self.mean(theta, np.atleast_2d(eta))
        sig = np.asarray(self.scales(theta), dtype=float)
        z = (y - m) / sig
        return np.sum(-0.5 * z ** 2 - np.log(sig) - 0.5 * np.log(2 * np.pi), axis=-1)

    def sample(self, theta, eta, rng: np.random.Generator) -> np.ndarray:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        m = self.mean(theta, eta)
        return m + np.asarray(self.scales(theta)) * rng.standard_normal(m.shape)

    def family(self, q: int):
        return enumerate_indices(self.d_eta, q)


class LinearMeanModel(GaussianRegressionModel):
    """``Y = X eta + sigma * eps`` with a common variance ``theta = (sigma2,)``.

    The parameter is the variance itself, not its logarithm.
    """

    n_theta = 1
    theta_names = ("sigma2",)

    def __init__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.X = X
        self.d_out, self.d_eta = X.shape

    def mean(self, theta, eta):
        return np.atleast_2d(eta) @ self.X.T

    def mean_eta_derivatives(self, theta, eta, q):
        eta = np.atleast_2d(eta)
        k = len(enumerate_indices(self.d_eta, q))
        out = np.zeros((eta.shape[0], self.d_out, k))
        out[:, :, : self.d_eta] = self.X[None]
        return out

    def scales(self, theta):
        s2 = float(np.atleast_1d(theta)[0])
        if s2 <= 0:
            raise ValueError(f"variance must be positive, got {s2}")
        return np.full(self.d_out, np.sqrt(s2))

    def mean_theta_jacobian(self, theta, eta):
        return np.zeros((np.atleast_2d(eta).shape[0], self.d_out, 1))

    def log_variance_jacobian(self, theta):
        s2 = float(np.atleast_1d(theta)[0])
        return np.full((self.d_out, 1), 1.0 / s2)
