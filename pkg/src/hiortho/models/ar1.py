"""Panel AR(1) with unit effects: the adjusted profile score for ``rho``.

``Y_ij = eta_i + rho * Y_i,j-1 + eps_ij`` for ``j = 1..T``, conditional on
``Y_i0``.  Second-order orthogonalization of the ``rho`` score, evaluated at
the within estimate of ``eta_i``, adds ``c(rho)`` per unit to the profile
score and removes its bias exactly.
"""
from __future__ import annotations

import numpy as np
from scipy import optimize


def ar1_bias_factor(rho: float, T: int) -> float:
    """``c(rho) = (1 - (1 - rho^T) / (T (1 - rho))) / (1 - rho)``, with ``c(0) = 1 - 1/T``."""
    rho = float(rho)
    if rho == 1.0:
        raise ValueError("c(rho) has a pole at rho = 1")
    if T < 1:
        raise ValueError("T must be positive")
    return (1.0 - (1.0 - rho ** T) / (T * (1.0 - rho))) / (1.0 - rho)


def _split_panel(panel):
    Y = np.atleast_2d(np.asarray(panel, dtype=float))
    if Y.shape[1] < 3:
        raise ValueError("need an initial observation and T >= 2 periods")
    return Y[:, 1:], Y[:, :-1]


def ar1_adjusted_score(panel, rho: float, sigma2: float) -> float:
    """Summed adjusted score for ``rho``.

    Parameters
    ----------
    panel : ndarray, shape (N, T + 1)
        Column 0 holds the conditioning observation ``Y_i0``.
    rho : float
        ``|rho| < 1``.
    sigma2 : float
        Error variance.
    """
    if not abs(rho) < 1:
        raise ValueError(f"need |rho| < 1, got {rho}")
    Y, Ylag = _split_panel(panel)
    N, T = Y.shape
    eta_hat = Y.mean(axis=1) - rho * Ylag.mean(axis=1)
    resid = Y - eta_hat[:, None] - rho * Ylag
    return float(np.sum(Ylag * resid) / sigma2 + N * ar1_bias_factor(rho, T))


def simulate_ar1_panel(N: int, T: int, rho: float, sigma2: float, eta, rng, burn: int = 50):
    """Stationary-start panel of shape (N, T + 1); column 0 is the conditioning value."""
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (N,))
    y = eta / (1 - rho) + np.sqrt(sigma2 / (1 - rho ** 2)) * rng.standard_normal(N)
    for _ in range(burn):
        y = eta + rho * y + np.sqrt(sigma2) * rng.standard_normal(N)
    out = np.empty((N, T + 1))
    out[:, 0] = y
    for j in range(1, T + 1):
        out[:, j] = eta + rho * out[:, j - 1] + np.sqrt(sigma2) * rng.standard_normal(N)
    return out


def ar1_estimate(panel, sigma2: float, bracket=(-0.99, 0.99)) -> float:
    """Root of the adjusted score in ``rho`` for a given variance."""
    f = lambda r: ar1_adjusted_score(panel, r, sigma2)
    grid = np.linspace(bracket[0], bracket[1], 199)
    vals = np.array([f(r) for r in grid])
    sign = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if sign.size == 0:
        raise RuntimeError("adjusted score has no root in the bracket")
    k = sign[0]
    return float(optimize.brentq(f, grid[k], grid[k + 1], xtol=1e-14, rtol=1e-15))
