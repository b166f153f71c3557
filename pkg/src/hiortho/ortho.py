"""Higher-order orthogonalization of moment functions in Gaussian models.

Given a conditional Gaussian model with mean ``m(theta, eta)`` and diagonal
scales ``sigma(theta)``, and a base moment ``u``, the engine builds

* the generalized score ``w_q``: all eta-derivatives of the density up to
  order ``q`` divided by the density,
* ``Sigma_ww = E[w_q w_q']`` and ``Sigma_wu = E[w_q u']``,
* ``b_q``: the stacked eta-derivatives of ``E[u | x]``,
* ``A = Sigma_ww^{-1} (Sigma_wu - b_q)``,

and returns ``u_q* = u - A' w_q``, whose expected eta-derivatives vanish up
to order ``q``.

All expectations are exact.  The generalized score is ``M @ r`` with ``M``
the Faa di Bruno matrix of the mean map and ``r`` the mean-derivative ratios,
which are products of Hermite polynomials in the standardized residuals.
Moments are supplied as finite Hermite expansions, so every cross moment
reduces to the Hermite orthogonality relation.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .chainrule import faa_di_bruno_matrix
from .gauss import DEFAULT_ORDER_CAP, OrderCapError, QuadratureRule, hermite_table, quadrature_rule
from .multiindex import enumerate_indices

SINGULAR_TOL = 1e-10


class SingularBasisCovariance(np.linalg.LinAlgError):
    """The covariance of the generalized score is numerically singular.

    This signals that the nuisance parameters are not separately identified
    from the available outcomes at this order.
    """

    def __init__(self, rcond: float, q: int, where=None):
        self.rcond = float(rcond)
        self.q = int(q)
        self.where = where
        loc = "" if where is None else f" (observations {list(where)[:10]})"
        super().__init__(f"generalized score covariance is singular at q={q}: rcond={rcond:.3e}{loc}")


# --------------------------------------------------------------------------
# Moment representations


@dataclass
class HermiteExpansion:
    """A moment written as ``u(y) = mean + sum_a coef[a] * prod_i He_{a_i}(z_i)``.

    Attributes
    ----------
    mean : ndarray, shape (N, du)
        ``E[u | x]`` at the evaluation point.
    terms : dict
        Maps an exponent tuple over outputs to coefficients of shape (N, du).
    mean_eta_derivs : ndarray, shape (N, k_q, du), optional
        Stacked eta-derivatives of ``mean``.  When absent the engine falls
        back on finite differences of ``mean_fn``.
    mean_fn : callable, optional
        ``eta -> E[u | x]`` with the other arguments held fixed.
    """

    mean: np.ndarray
    terms: dict = field(default_factory=dict)
    mean_eta_derivs: np.ndarray | None = None
    mean_fn: Callable | None = None

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Moment values at standardized residuals ``z`` of shape (N, ..., d_out)."""
        z = np.asarray(z, dtype=float)
        extra = z.ndim - 2
        out = np.broadcast_to(
            self.mean.reshape(self.mean.shape[:1] + (1,) * extra + self.mean.shape[1:]),
            z.shape[:-1] + (self.dim,),
        ).copy()
        if not self.terms:
            return out
        top = max(max(a) for a in self.terms)
        H = hermite_table(z, top)
        for a, coef in self.terms.items():
            basis = np.ones(z.shape[:-1])
            for i, e in enumerate(a):
                if e:
                    basis = basis * H[..., i, e]
            c = np.asarray(coef).reshape(coef.shape[:1] + (1,) * extra + coef.shape[1:])
            out += basis[..., None] * c
        return out


class Moment:
    """Base class: a moment function ``u(y; theta, eta, mu)`` of a Gaussian model."""

    dim: int = 1

    def expansion(self, model, theta, eta, mu, q: int) -> HermiteExpansion:
        raise NotImplementedError


class ScoreMoment(Moment):
    """Score of the log-likelihood with respect to (a subset of) theta.

    The score of a Gaussian regression is linear in ``He_1`` and ``He_2`` of
    each standardized residual: ``(dm_i/dtheta)/sigma_i`` on ``He_1(z_i)`` and
    ``(1/2) dlog sigma_i^2/dtheta`` on ``He_2(z_i)``.  Its conditional mean
    is zero, so its ``b_q`` vanishes.
    """

    def __init__(self, params: Sequence[int] | None = None):
        self.params = None if params is None else list(params)

    def _select(self, arr):
        return arr if self.params is None else arr[..., self.params]

    def expansion(self, model, theta, eta, mu, q):
        eta = np.atleast_2d(eta)
        n = eta.shape[0]
        sig = model.broadcast_scales(theta, n)
        jm = self._select(model.mean_theta_jacobian(theta, eta))
        jv = self._select(
            np.broadcast_to(model.log_variance_jacobian(theta), (n, model.d_out, model.n_theta))
        )
        du = jm.shape[-1]
        terms = {}
        for i in range(model.d_out):
            e1 = tuple(1 if r == i else 0 for r in range(model.d_out))
            e2 = tuple(2 if r == i else 0 for r in range(model.d_out))
            terms[e1] = jm[:, i, :] / sig[:, i : i + 1]
            terms[e2] = 0.5 * jv[:, i, :]
        k = len(enumerate_indices(model.d_eta, q)) if q > 0 else 0
        return HermiteExpansion(
            mean=np.zeros((n, du)),
            terms=terms,
            mean_eta_derivs=np.zeros((n, k, du)),
        )


class EtaFunctionMoment(Moment):
    """Outcome-free moment ``sign * (g(theta, eta) - mu)``.

    Parameters
    ----------
    g : callable
        ``g(theta, eta) -> (N, du)``.
    g_derivs : callable, optional
        ``g_derivs(theta, eta, q) -> (N, k_q, du)``, the stacked
        eta-derivatives of ``g``.  Finite differences are used when omitted.
    sign : {+1, -1}
    """

    def __init__(self, g, g_derivs=None, sign: int = 1, dim: int = 1):
        self.g = g
        self.g_derivs = g_derivs
        self.sign = float(sign)
        self.dim = dim

    def expansion(self, model, theta, eta, mu, q):
        eta = np.atleast_2d(eta)
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        gv = np.asarray(self.g(theta, eta), dtype=float).reshape(eta.shape[0], -1)
        derivs = None
        if q > 0 and self.g_derivs is not None:
            derivs = self.sign * np.asarray(self.g_derivs(theta, eta, q), dtype=float).reshape(
                eta.shape[0], -1, gv.shape[1]
            )
        elif q == 0:
            derivs = np.zeros((eta.shape[0], 0, gv.shape[1]))

        def mean_fn(e):
            return self.sign * (np.asarray(self.g(theta, e), dtype=float).reshape(e.shape[0], -1) - mu)

        return HermiteExpansion(
            mean=self.sign * (gv - mu), terms={}, mean_eta_derivs=derivs, mean_fn=mean_fn
        )


class StackedMoment(Moment):
    """Concatenation of several moments along the moment axis."""

    def __init__(self, parts: Sequence[Moment]):
        self.parts = list(parts)

    def expansion(self, model, theta, eta, mu, q):
        exps = [p.expansion(model, theta, eta, mu, q) for p in self.parts]
        n = exps[0].mean.shape[0]
        dims = [e.dim for e in exps]
        offsets = np.cumsum([0] + dims)
        total = offsets[-1]
        terms = {}
        for e, off in zip(exps, offsets[:-1]):
            for a, c in e.terms.items():
                if a not in terms:
                    terms[a] = np.zeros((n, total))
                terms[a][:, off : off + e.dim] += c
        mean = np.concatenate([e.mean for e in exps], axis=1)
        if all(isinstance(e.mean_eta_derivs, np.ndarray) for e in exps):
            derivs = np.concatenate([e.mean_eta_derivs for e in exps], axis=2)
        else:
            derivs = _MixedDerivs(exps)
        return HermiteExpansion(mean=mean, terms=terms, mean_eta_derivs=derivs)


class _MixedDerivs:
    """Per-part derivative sources; analytic parts are kept, the rest differenced."""

    def __init__(self, exps):
        self.exps = exps


# --------------------------------------------------------------------------
# Finite differences


def _stencil(exponents: Sequence[int]):
    """Offsets (in units of h) and weights of the nested central difference."""
    axes = [range(e + 1) for e in exponents]
    offsets, weights = [], []
    for js in itertools.product(*axes):
        off = [e / 2.0 - j for e, j in zip(exponents, js)]
        w = math.prod((-1) ** j * math.comb(e, j) for e, j in zip(exponents, js))
        offsets.append(off)
        weights.append(w)
    return np.array(offsets, dtype=float), np.array(weights, dtype=float)


def fd_derivative_table(f, x0, family, h, richardson: bool = True) -> np.ndarray:
    """Nested central-difference estimates of ``D^m f`` for every ``m`` in ``family``.

    Parameters
    ----------
    f : callable
        Maps a batch of points ``(B, d)`` to values ``(B, D)``.
    x0 : ndarray, shape (N, d)
    family : IndexFamily
    h : float or callable
        Step, or ``h(order) -> step`` (scalar or shape (N,)).
    richardson : bool
        Combine steps ``h`` and ``h/2`` as ``(4 D(h/2) - D(h)) / 3``.

    Returns
    -------
    ndarray, shape (N, len(family), D)
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    step_fn = h if callable(h) else (lambda p, _h=h: _h)
    points, meta = [], []
    for k, m in enumerate(family):
        e = m.exponents(d)
        offs, wts = _stencil(e)
        hk = np.broadcast_to(np.asarray(step_fn(m.order), dtype=float), (n,))
        scales = [hk] + ([hk / 2.0] if richardson else [])
        for s_idx, hs in enumerate(scales):
            pts = x0[:, None, :] + offs[None, :, :] * hs[:, None, None]
            meta.append((k, s_idx, len(points), len(offs), wts, hs ** m.order))
            points.append(pts)
    counts = [p.shape[1] for p in points]
    flat = np.concatenate(points, axis=1).reshape(-1, d)
    vals = np.asarray(f(flat), dtype=float)
    vals = vals.reshape(n, sum(counts), -1)
    starts = np.cumsum([0] + counts)
    out = np.zeros((n, len(family), vals.shape[2]))
    est = {}
    for k, s_idx, pidx, cnt, wts, hp in meta:
        block = vals[:, starts[pidx] : starts[pidx] + cnt, :]
        est[(k, s_idx)] = np.einsum("s,nsd->nd", wts, block) / hp[:, None]
    for k in range(len(family)):
        if richardson:
            out[:, k] = (4.0 * est[(k, 1)] - est[(k, 0)]) / 3.0
        else:
            out[:, k] = est[(k, 0)]
    return out


def default_fd_step(eta: np.ndarray):
    """``h = eps^(1/(p+2)) * (1 + |eta|)`` for an order-``p`` difference."""
    scale = 1.0 + np.max(np.abs(np.atleast_2d(eta)), axis=1)
    eps = np.finfo(float).eps

    def step(p):
        return eps ** (1.0 / (p + 2)) * scale

    return step


# --------------------------------------------------------------------------
# Engine


@dataclass
class ProjectionComponents:
    """Per-observation projection matrices, stacked along the first axis."""

    q: int
    sigma_ww: np.ndarray  # (N, k, k)
    sigma_wu: np.ndarray  # (N, k, du)
    b_q: np.ndarray  # (N, k, du)
    A: np.ndarray  # (N, k, du)
    rcond: np.ndarray  # (N,)
    M: np.ndarray  # (N, k, k_out)
    mean: np.ndarray  # (N, d_out)
    sigmas: np.ndarray  # (N, d_out)
    expansion: HermiteExpansion


def _ratio_table(z: np.ndarray, sig: np.ndarray, exps: np.ndarray, cap: int) -> np.ndarray:
    """``r_lam = prod_i He_{lam_i}(z_i) / sigma_i^{lam_i}`` for every row ``lam`` of ``exps``.

    ``z`` has shape (N, ..., d_out) and ``sig`` shape (N, d_out).
    """
    top = int(exps.max())
    if top > cap:
        raise OrderCapError(f"derivative order {top} exceeds cap {cap}")
    H = hermite_table(z, top, cap)  # (N, ..., d_out, top+1)
    d_out = z.shape[-1]
    gathered = H[..., np.arange(d_out)[None, :], exps]  # (N, ..., k_out, d_out)
    vals = np.prod(gathered, axis=-1)
    denom = np.prod(sig[:, None, :] ** exps[None, :, :], axis=-1)  # (N, k_out)
    denom = denom.reshape(denom.shape[:1] + (1,) * (z.ndim - 2) + denom.shape[1:])
    return vals / denom


def _kappa_vector(sig: np.ndarray, exps: np.ndarray) -> np.ndarray:
    fact = np.array([math.prod(math.factorial(int(e)) for e in row) for row in exps], dtype=float)
    return fact[None, :] / np.prod(sig[:, None, :] ** (2 * exps[None, :, :]), axis=-1)


def _prepare(model, theta, eta, q):
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    md = model.mean_derivatives(theta, eta, q)
    M = faa_di_bruno_matrix(md, q)
    sig = model.broadcast_scales(theta, eta.shape[0])
    exps = np.array(enumerate_indices(model.d_out, q).exponent_table(), dtype=np.intp)
    return eta, md, M, sig, exps


def generalized_score(model, y, theta, eta, q: int, cap: int = DEFAULT_ORDER_CAP) -> np.ndarray:
    """Stacked ratios ``D^m_eta l / l`` for ``|m| <= q``.

    ``y`` has shape (N, d_out) or (N, K, d_out); the result has the same
    leading shape with last axis of length ``len(enumerate_indices(d_eta, q))``.
    """
    if q < 1:
        raise ValueError("generalized score needs q >= 1")
    eta, md, M, sig, exps = _prepare(model, theta, eta, q)
    return _score_from(y, md.value, sig, M, exps, cap)


def _score_from(y, mean, sig, M, exps, cap):
    y = np.asarray(y, dtype=float)
    squeeze = y.ndim == 2
    if squeeze:
        y = y[:, None, :]
    z = (y - mean[:, None, :]) / sig[:, None, :]
    r = _ratio_table(z, sig, exps, cap)  # (N, K, k_out)
    w = np.einsum("nkl,nsl->nsk", M, r)
    return w[:, 0] if squeeze else w


def _resolve_b(exp: HermiteExpansion, eta, q, model):
    fam = enumerate_indices(model.d_eta, q)
    derivs = exp.mean_eta_derivs
    if isinstance(derivs, _MixedDerivs):
        cols = []
        for part in derivs.exps:
            cols.append(_resolve_b(part, eta, q, model))
        return np.concatenate(cols, axis=2)
    if derivs is not None:
        return np.asarray(derivs, dtype=float)
    if exp.mean_fn is None:
        raise ValueError("moment provides neither analytic eta-derivatives nor a mean function")
    return fd_derivative_table(exp.mean_fn, eta, fam, default_fd_step(eta), richardson=True)


def projection_components(
    model,
    moment: Moment,
    theta,
    eta,
    mu=None,
    q: int = 2,
    *,
    singular_tol: float = SINGULAR_TOL,
    method: str = "closed",
    rule: QuadratureRule | None = None,
    cap: int = DEFAULT_ORDER_CAP,
) -> ProjectionComponents:
    """Projection matrices at ``(theta, eta, mu)`` for a batch of observations.

    Parameters
    ----------
    model : GaussianRegressionModel
    moment : Moment
    theta : array_like
    eta : array_like, shape (N, d_eta)
    mu : array_like, optional
    q : int
        Orthogonalization order.  ``q = 0`` returns empty components so the
        orthogonalized moment equals the plug-in moment.
    method : {"closed", "quadrature"}
        ``"quadrature"`` computes ``Sigma_ww`` and ``Sigma_wu`` by tensor
        Gauss-Hermite integration instead of the Hermite moment identities.

    Raises
    ------
    SingularBasisCovariance
        If the reciprocal condition number of ``Sigma_ww`` falls below
        ``singular_tol`` for any observation.
    """
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    n = eta.shape[0]
    mu = np.zeros(0) if mu is None else np.atleast_1d(np.asarray(mu, dtype=float))
    exp = moment.expansion(model, theta, eta, mu, q)
    du = exp.dim
    if q == 0:
        empty = np.zeros((n, 0, du))
        return ProjectionComponents(
            0, np.zeros((n, 0, 0)), empty, empty, empty, np.ones(n), np.zeros((n, 0, 0)),
            model.mean(theta, eta), model.broadcast_scales(theta, n), exp,
        )
    eta, md, M, sig, exps = _prepare(model, theta, eta, q)
    k_out = exps.shape[0]

    if method == "closed":
        kappa = _kappa_vector(sig, exps)  # (N, k_out)
        sigma_ww = np.einsum("nkl,nl,njl->nkj", M, kappa, M)
        # E[r_lam u] = c_lam * lam! / sigma^(2 lam) * sigma^lam = coef * kappa * sigma^lam
        cross = np.zeros((n, k_out, du))
        index = {tuple(row): j for j, row in enumerate(exps.tolist())}
        for a, coef in exp.terms.items():
            j = index.get(tuple(a))
            if j is not None:
                sig_pow = np.prod(sig ** exps[j][None, :], axis=1)
                cross[:, j, :] += coef * (kappa[:, j] * sig_pow)[:, None]
        sigma_wu = np.einsum("nkl,nld->nkd", M, cross)
    elif method == "quadrature":
        rule = rule or quadrature_rule(model.d_out)
        ys = md.value[:, None, :] + sig[:, None, :] * rule.nodes[None, :, :]
        z = (ys - md.value[:, None, :]) / sig[:, None, :]
        w = _score_from(ys, md.value, sig, M, exps, cap)  # (N, K, k)
        u = exp.evaluate(z)  # (N, K, du)
        sigma_ww = np.einsum("s,nsk,nsj->nkj", rule.weights, w, w)
        sigma_wu = np.einsum("s,nsk,nsd->nkd", rule.weights, w, u)
    else:
        raise ValueError(f"unknown method {method!r}")

    sigma_ww = 0.5 * (sigma_ww + np.swapaxes(sigma_ww, 1, 2))
    b_q = _resolve_b(exp, eta, q, model)
    eig = np.linalg.eigvalsh(sigma_ww)
    top = np.max(np.abs(eig), axis=1)
    rcond = np.where(top > 0, eig[:, 0] / np.where(top > 0, top, 1.0), 0.0)
    bad = np.flatnonzero(~(rcond >= singular_tol))
    if bad.size:
        raise SingularBasisCovariance(float(np.min(rcond[bad])), q, where=bad)
    A = np.linalg.solve(sigma_ww, sigma_wu - b_q)
    return ProjectionComponents(q, sigma_ww, sigma_wu, b_q, A, rcond, M, md.value, sig, exp)


def orthogonalized_moment(
    model,
    moment: Moment,
    y,
    theta,
    eta,
    mu=None,
    q: int = 2,
    components: ProjectionComponents | None = None,
    **kwargs,
) -> np.ndarray:
    """``u_q*(y) = u(y) - A' w_q(y)``.

    ``y`` is (N, d_out) or (N, K, d_out); the result has moment axis last.
    """
    if components is None:
        components = projection_components(model, moment, theta, eta, mu, q, **kwargs)
    c = components
    y = np.asarray(y, dtype=float)
    squeeze = y.ndim == 2
    if squeeze:
        y = y[:, None, :]
    z = (y - c.mean[:, None, :]) / c.sigmas[:, None, :]
    u = c.expansion.evaluate(z)
    if c.q > 0:
        exps = np.array(enumerate_indices(model.d_out, c.q).exponent_table(), dtype=np.intp)
        w = _score_from(y, c.mean, c.sigmas, c.M, exps, kwargs.get("cap", DEFAULT_ORDER_CAP))
        u = u - np.einsum("nkd,nsk->nsd", c.A, w)
    return u[:, 0] if squeeze else u


# --------------------------------------------------------------------------
# Numerical verification


@dataclass
class OrthogonalityReport:
    """Expected eta-derivatives of a moment at one evaluation point."""

    q: int
    derivatives: np.ndarray  # (k_q, du)
    indices: list
    max_violation: float
    reduced_confidence: list

    def by_order(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for m, row in zip(self.indices, self.derivatives):
            out[len(m)] = max(out.get(len(m), 0.0), float(np.max(np.abs(row))))
        return out


def _point_moment_fn(model, moment, theta, mu, q, ys, weights, **kwargs):
    def F(eta_b):
        eta_b = np.atleast_2d(eta_b)
        comps = projection_components(model, moment, theta, eta_b, mu, q, **kwargs)
        yb = np.broadcast_to(ys, (eta_b.shape[0],) + ys.shape)
        vals = orthogonalized_moment(model, moment, yb, theta, eta_b, mu, q, components=comps)
        return np.einsum("s,nsd->nd", weights, vals)

    return F


def orthogonality_check(
    model,
    moment: Moment,
    theta,
    eta,
    mu=None,
    q: int = 2,
    rule: QuadratureRule | None = None,
    *,
    check_order: int | None = None,
    h: float = 1e-2,
    **kwargs,
) -> OrthogonalityReport:
    """Estimate ``E_eta[D^m_eta' u_q*(Y; eta')]`` at ``eta' = eta`` for ``|m| <= check_order``.

    The outcome distribution stays at ``eta``; only the moment's nuisance
    argument moves.  Expectations use tensor Gauss-Hermite quadrature and
    derivatives use nested central differences with Richardson extrapolation.

    Parameters
    ----------
    q : int
        Orthogonalization order of the moment (0 for the plug-in moment).
    check_order : int, optional
        Highest derivative order inspected; defaults to ``max(q, 1)``.
    """
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    if eta.shape[0] != 1:
        raise ValueError("orthogonality_check works at one evaluation point")
    if model.d_out > 4:
        raise ValueError("quadrature check supports at most 4 outcomes")
    rule = rule or quadrature_rule(model.d_out)
    check_order = max(q, 1) if check_order is None else check_order
    mean = model.mean(theta, eta)[0]
    sig = model.broadcast_scales(theta, 1)[0]
    ys = mean + sig * rule.nodes
    F = _point_moment_fn(model, moment, theta, mu, q, ys, rule.weights, **kwargs)
    fam = enumerate_indices(model.d_eta, check_order)
    table = fd_derivative_table(F, eta, fam, h, richardson=True)[0]
    reduced = [m.entries for m in fam if m.order >= 5 and m.order == q]
    return OrthogonalityReport(
        q=q,
        derivatives=table,
        indices=[m.entries for m in fam],
        max_violation=float(np.max(np.abs(table))),
        reduced_confidence=reduced,
    )


def lemma_sign_matrix(model, theta, eta, q: int, rule: QuadratureRule | None = None, h: float = 1e-2):
    """``E_eta[D^m_eta' (Sigma_ww(eta')^{-1} w_q(Y; eta'))]`` as a (k_q, k_q) matrix.

    Rows index the components of the whitened score, columns the derivative
    ``m``.  The exact value is the diagonal matrix with ``(-1)^|m|`` entries.
    """
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    rule = rule or quadrature_rule(model.d_out)
    mean = model.mean(theta, eta)[0]
    sig = model.broadcast_scales(theta, 1)[0]
    ys = mean + sig * rule.nodes

    def F(eta_b):
        eta_b, md, M, s, exps = _prepare(model, theta, eta_b, q)
        kappa = _kappa_vector(s, exps)
        sww = np.einsum("nkl,nl,njl->nkj", M, kappa, M)
        yb = np.broadcast_to(ys, (eta_b.shape[0],) + ys.shape)
        w = _score_from(yb, md.value, s, M, exps, DEFAULT_ORDER_CAP)
        whitened = np.linalg.solve(sww[:, None], w[..., None])[..., 0]
        return np.einsum("s,nsk->nk", rule.weights, whitened)

    fam = enumerate_indices(model.d_eta, q)
    table = fd_derivative_table(F, eta, fam, h, richardson=True)[0]  # (k_m, k_comp)
    return table.T


def lemma_sign_target(d_eta: int, q: int) -> np.ndarray:
    fam = enumerate_indices(d_eta, q)
    return np.diag([(-1.0) ** m.order for m in fam])
