"""CES team production with teams of one and two workers.

For a co-authored paper ``j`` with workers ``k1, k2`` and one sole-authored
paper of each worker, the three log outputs are

    Y_j  = log beta + F(a) + sigma(2) eps_0
    Y_j1 = a_1 + sigma(1) eps_1
    Y_j2 = a_2 + sigma(1) eps_2

with ``a`` the log worker effects and
``F(a) = (1/gamma) log((exp(gamma a_1) + exp(gamma a_2)) / 2)``, the log of
the CES aggregate of the effect levels.

Internally the common parameter is ``(log beta, gamma, log sigma2(1),
log sigma2(2))`` so that positivity is automatic.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import expit

from ..chainrule import MeanDerivatives, faa_di_bruno_matrix
from ..multiindex import enumerate_indices
from ..ortho import EtaFunctionMoment
from .base import GaussianRegressionModel

GAMMA_FLOOR = 1e-3


@dataclass(frozen=True)
class CesTheta:
    """Common parameters in natural units."""

    beta: float
    gamma: float
    sigma2_1: float
    sigma2_2: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.gamma == 0:
            raise ValueError("gamma = 0 (Cobb-Douglas limit) is not supported")
        if not (self.sigma2_1 > 0 and self.sigma2_2 > 0):
            raise ValueError("error variances must be positive")

    def to_internal(self) -> np.ndarray:
        return np.array([np.log(self.beta), self.gamma, np.log(self.sigma2_1), np.log(self.sigma2_2)])

    @classmethod
    def from_internal(cls, vec) -> "CesTheta":
        lb, g, ls1, ls2 = (float(v) for v in vec)
        return cls(float(np.exp(lb)), g, float(np.exp(ls1)), float(np.exp(ls2)))

    def as_dict(self) -> dict[str, float]:
        return {"beta": self.beta, "gamma": self.gamma, "sigma2_1": self.sigma2_1, "sigma2_2": self.sigma2_2}


PARAM_NAMES = ("beta", "gamma", "sigma2_1", "sigma2_2")


def clip_gamma(gamma: float) -> float:
    """Keep ``|gamma| >= GAMMA_FLOOR``, preserving sign (0 maps to the positive side)."""
    if abs(gamma) >= GAMMA_FLOOR:
        return float(gamma)
    return GAMMA_FLOOR if gamma >= 0 else -GAMMA_FLOOR


def _gamma(theta) -> float:
    g = float(theta[1])
    if g == 0:
        raise ValueError("gamma = 0 is a removable singularity of the CES aggregator")
    return g


@lru_cache(maxsize=None)
def logistic_derivative_poly(n: int) -> Polynomial:
    """Polynomial ``P_n`` with ``d^n/dx^n s(x) = P_n(s(x))`` for the logistic ``s``."""
    if n == 0:
        return Polynomial([0.0, 1.0])
    prev = logistic_derivative_poly(n - 1)
    return prev.deriv() * Polynomial([0.0, 1.0, -1.0])


def ces_log_aggregate(a, gamma: float) -> np.ndarray:
    """``F(a) = (1/gamma) log((e^{gamma a1} + e^{gamma a2}) / 2)`` for rows of ``a``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    d = a[:, 0] - a[:, 1]
    return a[:, 1] + (np.logaddexp(gamma * d, 0.0) - np.log(2.0)) / gamma


def ces_log_aggregate_derivatives(a, gamma: float, q: int) -> np.ndarray:
    """Stacked ``D^m F`` over ``enumerate_indices(2, q)``, shape (N, k_q)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    d = a[:, 0] - a[:, 1]
    s = expit(gamma * d)
    fam = enumerate_indices(2, q)
    out = np.empty((a.shape[0], len(fam)))
    for k, m in enumerate(fam):
        k1, k2 = m.exponents(2)
        n = k1 + k2
        if n == 1:
            out[:, k] = s if k1 == 1 else 1.0 - s
        else:
            out[:, k] = (-1.0) ** k2 * gamma ** (n - 1) * logistic_derivative_poly(n - 1)(s)
    return out


class CesSubsetModel(GaussianRegressionModel):
    """Gaussian model of one co-authored paper plus one sole paper per co-author.

    Parameters
    ----------
    include_solos : bool
        With ``False`` only the co-authored outcome is modelled; the two
        effects are then not separately identified.
    """

    d_eta = 2
    n_theta = 4
    theta_names = PARAM_NAMES

    def __init__(self, include_solos: bool = True):
        self.include_solos = include_solos
        self.d_out = 3 if include_solos else 1

    def mean(self, theta, eta):
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        g = _gamma(theta)
        row0 = float(theta[0]) + ces_log_aggregate(eta, g)
        if not self.include_solos:
            return row0[:, None]
        return np.column_stack([row0, eta[:, 0], eta[:, 1]])

    def mean_eta_derivatives(self, theta, eta, q):
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        k = len(enumerate_indices(2, q))
        out = np.zeros((eta.shape[0], self.d_out, k))
        out[:, 0, :] = ces_log_aggregate_derivatives(eta, _gamma(theta), q)
        if self.include_solos:
            out[:, 1, 0] = 1.0
            out[:, 2, 1] = 1.0
        return out

    def scales(self, theta):
        s1 = np.exp(0.5 * float(theta[2]))
        s2 = np.exp(0.5 * float(theta[3]))
        return np.array([s2, s1, s1]) if self.include_solos else np.array([s2])

    def mean_theta_jacobian(self, theta, eta):
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        g = _gamma(theta)
        F = ces_log_aggregate(eta, g)
        p = expit(g * (eta[:, 0] - eta[:, 1]))
        out = np.zeros((eta.shape[0], self.d_out, 4))
        out[:, 0, 0] = 1.0
        out[:, 0, 1] = (p * eta[:, 0] + (1 - p) * eta[:, 1] - F) / g
        return out

    def log_variance_jacobian(self, theta):
        out = np.zeros((self.d_out, 4))
        out[0, 3] = 1.0
        if self.include_solos:
            out[1:, 2] = 1.0
        return out


def ces_subset_model(theta: CesTheta | None = None, include_solos: bool = True) -> CesSubsetModel:
    """The three-outcome subset model; ``theta`` is only validated here."""
    return CesSubsetModel(include_solos=include_solos)


def effects_to_log(levels) -> np.ndarray:
    levels = np.asarray(levels, dtype=float)
    if np.any(levels <= 0):
        raise ValueError("worker effects must be positive to take logs")
    return np.log(levels)


def expected_team_output(theta, eta) -> np.ndarray:
    """``E[exp(Y_j)] = beta * CES(e^a) * exp(sigma2(2) / 2)``, shape (N, 1)."""
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    h = float(theta[0]) + ces_log_aggregate(eta, _gamma(theta)) + 0.5 * np.exp(float(theta[3]))
    return np.exp(h)[:, None]


def expected_team_output_derivatives(theta, eta, q: int) -> np.ndarray:
    """Eta-derivatives of :func:`expected_team_output` via the chain rule for ``exp``."""
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    g = _gamma(theta)
    value = expected_team_output(theta, eta)
    derivs = ces_log_aggregate_derivatives(eta, g, q)[:, None, :]
    md = MeanDerivatives(2, q, np.log(value), derivs)
    M = faa_di_bruno_matrix(md, q)  # (N, k_q, q): every derivative of exp is exp
    return (value[:, 0, None] * M.sum(axis=2))[:, :, None]


def average_output_moment() -> EtaFunctionMoment:
    """``u = E[exp(Y_j) | a] - mu`` for the average output of observed teams."""
    return EtaFunctionMoment(expected_team_output, expected_team_output_derivatives, sign=1)


def beta_restriction(theta: CesTheta, moments) -> float:
    """``(E[Y^gamma | 2] / E[Y^gamma | 1])^(1/gamma) * exp(gamma (sigma2(1) - sigma2(2)) / 2)``.

    ``moments`` holds the two conditional moments of output levels raised to
    ``gamma``, for teams of size two and one.
    """
    m2, m1 = (float(v) for v in moments)
    if theta.gamma == 0:
        raise ValueError("gamma = 0 is not supported")
    if m2 <= 0 or m1 <= 0:
        raise ValueError("moments must be positive")
    g = theta.gamma
    return float((m2 / m1) ** (1.0 / g) * np.exp(g * (theta.sigma2_1 - theta.sigma2_2) / 2.0))


class CesSoloPairModel(GaussianRegressionModel):
    """Two sole-authored outcomes ``Y_r = a_r + sigma(1) eps_r`` under the CES parameterization.

    Used to orthogonalize functions of two author effects, such as the
    expected output of a hypothetical team, with respect to both effects.
    """

    d_eta = 2
    d_out = 2
    n_theta = 4
    theta_names = PARAM_NAMES

    def mean(self, theta, eta):
        return np.atleast_2d(np.asarray(eta, dtype=float)).copy()

    def mean_eta_derivatives(self, theta, eta, q):
        eta = np.atleast_2d(eta)
        out = np.zeros((eta.shape[0], 2, len(enumerate_indices(2, q))))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = 1.0
        return out

    def scales(self, theta):
        return np.full(2, np.exp(0.5 * float(theta[2])))

    def mean_theta_jacobian(self, theta, eta):
        return np.zeros((np.atleast_2d(eta).shape[0], 2, 4))

    def log_variance_jacobian(self, theta):
        out = np.zeros((2, 4))
        out[:, 2] = 1.0
        return out
