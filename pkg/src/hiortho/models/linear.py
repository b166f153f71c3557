"""Linear regression with a general design: trace-corrected estimators.

``Y = X eta + sigma * eps`` with ``n`` outcomes and ``r`` effects.  Quadratic
forms ``eta' Q eta`` and the error variance have exactly unbiased estimators
obtained by second-order orthogonalization.
"""
from __future__ import annotations

import numpy as np

from ..multiindex import enumerate_indices
from ..ortho import EtaFunctionMoment, ScoreMoment, orthogonalized_moment
from .base import LinearMeanModel

RCOND_TOL = 1e-12


def _pinv_projection(X):
    return X @ np.linalg.pinv(X)


def linear_trace_estimators(Y, X, Q, sigma2=None) -> tuple[float, float]:
    """Trace-corrected estimators of ``eta' Q eta`` and ``sigma^2``.

    Parameters
    ----------
    Y : ndarray, shape (n,)
    X : ndarray, shape (n, r)
    Q : ndarray, shape (r, r), symmetric
    sigma2 : float, optional
        Known error variance.  The degrees-of-freedom estimator is used when
        omitted.

    Returns
    -------
    mu_hat, sigma2_hat : float
        ``mu_hat = Y'X(X'X)^-1 Q (X'X)^-1 X'Y - sigma2 tr(Q (X'X)^-1)`` and
        ``sigma2_hat = Y'(I - P)Y / (n - tr P)``.  ``sigma2_hat`` allows a
        rank-deficient design through the pseudo-inverse.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = X.shape[0]
    P = _pinv_projection(X)
    dof = n - np.trace(P)
    if dof < 0.5:
        raise ZeroDivisionError("design spans the outcome space: n equals rank(X)")
    sigma2_hat = float(Y @ (Y - P @ Y) / dof)
    XtX = X.T @ X
    if 1.0 / np.linalg.cond(XtX) < RCOND_TOL:
        raise np.linalg.LinAlgError("X'X is singular; the quadratic form is not estimable")
    XtX_inv = np.linalg.inv(XtX)
    s2 = sigma2_hat if sigma2 is None else float(sigma2)
    coef = XtX_inv @ X.T @ Y
    mu_hat = float(coef @ Q @ coef - s2 * np.trace(Q @ XtX_inv))
    return mu_hat, sigma2_hat


def quadratic_form_moment(Q) -> EtaFunctionMoment:
    """``u = mu - eta' Q eta`` with exact eta-derivatives."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    r = Q.shape[0]

    def g(theta, eta):
        eta = np.atleast_2d(eta)
        return np.einsum("na,ab,nb->n", eta, Q, eta)[:, None]

    def g_derivs(theta, eta, q):
        eta = np.atleast_2d(eta)
        fam = enumerate_indices(r, q)
        out = np.zeros((eta.shape[0], len(fam), 1))
        out[:, :r, 0] = 2 * eta @ Q
        if q >= 2:
            for k, m in enumerate(fam):
                if m.order == 2:
                    a, b = m.entries
                    out[:, k, 0] = 2 * Q[a, b]
        return out

    return EtaFunctionMoment(g, g_derivs, sign=-1)


def linear_engine_estimates(Y, X, Q, sigma2=None, eta_hat=None, q: int = 2):
    """The same estimators obtained from the generic orthogonalization engine.

    The variance solves the scalar orthogonalized score, which is affine in
    ``1/sigma^2`` at ``q = 2``; the quadratic form solves its moment, which is
    affine in ``mu``.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    model = LinearMeanModel(X)
    if eta_hat is None:
        eta_hat = np.linalg.lstsq(X, Y, rcond=None)[0]
    eta_hat = np.reshape(eta_hat, (1, -1))
    y = Y[None, :]
    # u*(s2) * s2^2 is affine in s2: a + b * s2; two evaluations pin it down
    vals = []
    for s2 in (1.0, 2.0):
        u = orthogonalized_moment(model, ScoreMoment(), y, [s2], eta_hat, None, q)[0, 0]
        vals.append(u * s2 ** 2)
    slope = vals[1] - vals[0]
    intercept = vals[0] - slope
    sigma2_hat = float(-intercept / slope)
    s2 = sigma2_hat if sigma2 is None else float(sigma2)
    u_mu = orthogonalized_moment(model, quadratic_form_moment(Q), y, [s2], eta_hat, [0.0], q)[0, 0]
    mu_hat = float(-u_mu)
    return mu_hat, sigma2_hat
