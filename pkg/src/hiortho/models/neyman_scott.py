"""Panel with unit-specific means and a common variance.

``Y_it = eta_i + sigma * eps_it`` for ``t = 1..T``.  Each unit is one
observation of a :class:`LinearMeanModel` with a column of ones as design.
"""
from __future__ import annotations

import numpy as np

from ..multiindex import enumerate_indices
from ..ortho import EtaFunctionMoment, ScoreMoment, orthogonalized_moment
from .base import LinearMeanModel


class DegeneratePanelError(ValueError):
    """Fewer than two periods per unit."""


class NeymanScottModel(LinearMeanModel):
    """One unit of the panel: ``T`` outcomes sharing the mean ``eta``."""

    def __init__(self, T: int):
        if T < 1:
            raise ValueError("T must be positive")
        super().__init__(np.ones((T, 1)))
        self.T = T


def _check_panel(panel) -> np.ndarray:
    Y = np.atleast_2d(np.asarray(panel, dtype=float))
    if Y.shape[1] < 2:
        raise DegeneratePanelError(f"need T >= 2 periods, got T={Y.shape[1]}")
    return Y


def neyman_scott_closed_forms(panel) -> tuple[float, float]:
    """Degrees-of-freedom corrected variance and the bias-corrected mean of ``eta_i^2``.

    Returns
    -------
    sigma2_hat : float
        ``sum_i sum_t (Y_it - Ybar_i)^2 / (N (T - 1))``.
    mu_hat : float
        ``mean_i(Ybar_i^2) - sigma2_hat / T``.
    """
    Y = _check_panel(panel)
    N, T = Y.shape
    ybar = Y.mean(axis=1)
    sigma2_hat = float(np.sum((Y - ybar[:, None]) ** 2) / (N * (T - 1)))
    mu_hat = float(np.mean(ybar ** 2) - sigma2_hat / T)
    return sigma2_hat, mu_hat


def squared_mean_moment() -> EtaFunctionMoment:
    """``u = eta^2 - mu`` with its exact eta-derivatives ``(2 eta, 2, 0, ...)``."""

    def g(theta, eta):
        return np.atleast_2d(eta)[:, :1] ** 2

    def g_derivs(theta, eta, q):
        eta = np.atleast_2d(eta)
        out = np.zeros((eta.shape[0], len(enumerate_indices(1, q)), 1))
        out[:, 0, 0] = 2 * eta[:, 0]
        if q >= 2:
            out[:, 1, 0] = 2.0
        return out

    return EtaFunctionMoment(g, g_derivs, sign=1)


def neyman_scott_engine_estimates(panel, q: int = 2, eta_hat=None, tol: float = 1e-12):
    """Solve the orthogonalized variance score and the ``eta^2`` moment with the generic engine.

    ``eta_hat`` defaults to the unit means; at ``q = 2`` the result does
    not depend on it.
    """
    from ..estimate import gmm_solve

    Y = _check_panel(panel)
    N, T = Y.shape
    model = NeymanScottModel(T)
    eta_hat = Y.mean(axis=1, keepdims=True) if eta_hat is None else np.reshape(eta_hat, (N, 1))
    score = ScoreMoment()

    def total(par):
        s2 = float(par[0])
        if s2 <= 0:
            return np.array([np.inf])
        u = orthogonalized_moment(model, score, Y, [s2], eta_hat, None, q)
        return u.sum(axis=0) * s2 ** 2 / N

    init = np.array([float(np.mean((Y - eta_hat) ** 2))])
    res = gmm_solve(total, np.eye(1), init, tol=tol)
    s2 = float(res.estimate[0])
    mu_u = orthogonalized_moment(model, squared_mean_moment(), Y, [s2], eta_hat, [0.0], q)
    mu_hat = float(np.mean(mu_u[:, 0]))
    return s2, mu_hat, res
