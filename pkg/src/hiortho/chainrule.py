"""Multivariate Faa di Bruno matrix.

For a scalar ``f`` evaluated at ``m(eta)`` with ``m: R^d_eta -> R^d_out``,
every eta-derivative of ``f(m(eta))`` up to order ``q`` is a linear
combination of m-derivatives of ``f`` of order ``<= q``::

    grad^q_eta f(m(eta)) = M(eta) @ grad^q_m f

The coefficients of ``M`` are polynomials in the derivatives of ``m``.  They
follow the Constantine-Savits form of the formula: for exponent vectors ``nu``
(over eta) and ``lam`` (over m),

    M[nu, lam] = sum over s and over choices l_1 < ... < l_s, k_1..k_s with
        sum_j k_j = lam and sum_j |k_j| l_j = nu of
        nu! prod_j prod_i (D^{l_j} m_i)^{k_ji} / (k_j! (l_j!)^|k_j|)

The combinatorial part only depends on ``(d_eta, d_out, q)``; it is built
once as an integer template and cached.  Evaluation is a gather-product over
a flat table of mean derivatives, vectorized across observations.
"""
from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import sparse

from .multiindex import MultiIndex, enumerate_indices


class IncompleteDerivativesError(ValueError):
    """Mean derivatives are missing some required multi-indices."""


@dataclass(frozen=True)
class MeanDerivatives:
    """Derivatives of a mean map, batched over observations.

    Attributes
    ----------
    value : ndarray, shape (N, d_out)
        The mean itself.
    derivs : ndarray, shape (N, d_out, k_q)
        ``derivs[n, i, k]`` is ``D^{family[k]} m_i`` at observation ``n``,
        with ``family = enumerate_indices(d_eta, q)``.
    """

    d_eta: int
    q: int
    value: np.ndarray
    derivs: np.ndarray

    def __post_init__(self):
        value = np.atleast_2d(np.asarray(self.value, dtype=float))
        derivs = np.asarray(self.derivs, dtype=float)
        if derivs.ndim == 2:
            derivs = derivs[None]
        fam = enumerate_indices(self.d_eta, self.q)
        if derivs.shape[0] != value.shape[0] or derivs.shape[1] != value.shape[1]:
            raise IncompleteDerivativesError(
                f"batch/output shape mismatch: value {value.shape}, derivs {derivs.shape}"
            )
        if derivs.shape[2] < len(fam):
            missing = [m.entries for m in fam.indices[derivs.shape[2]:]]
            raise IncompleteDerivativesError(f"missing mean derivatives for indices {missing}")
        if derivs.shape[2] > len(fam):
            raise IncompleteDerivativesError(
                f"got {derivs.shape[2]} derivative slots, family has {len(fam)}"
            )
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "derivs", derivs)

    @property
    def d_out(self) -> int:
        return self.value.shape[1]

    @property
    def n_obs(self) -> int:
        return self.value.shape[0]

    @classmethod
    def from_mapping(cls, d_eta: int, q: int, value, mapping) -> "MeanDerivatives":
        """Build from ``{(output, multi-index): value}`` for a single observation.

        Raises :class:`IncompleteDerivativesError` listing absent keys.
        """
        value = np.atleast_1d(np.asarray(value, dtype=float))
        fam = enumerate_indices(d_eta, q)
        out = np.empty((1, value.size, len(fam)))
        missing = []
        norm = {}
        for (i, m), v in mapping.items():
            key = m if isinstance(m, MultiIndex) else MultiIndex(tuple(sorted(m)))
            norm[(int(i), key)] = v
        for i in range(value.size):
            for k, m in enumerate(fam):
                if (i, m) in norm:
                    out[0, i, k] = norm[(i, m)]
                else:
                    missing.append((i, m.entries))
        if missing:
            raise IncompleteDerivativesError(f"missing mean derivatives: {missing}")
        return cls(d_eta, q, value[None], out)


@dataclass(frozen=True)
class FaaDiBrunoTemplate:
    """Integer coefficient template for one ``(d_eta, d_out, q)`` signature."""

    d_eta: int
    d_out: int
    q: int
    rows: np.ndarray
    cols: np.ndarray
    coeffs: np.ndarray
    factors: np.ndarray  # (n_terms, q) flat indices, padded with the ones column
    scatter: sparse.csr_matrix  # (n_terms, n_rows * n_cols)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(enumerate_indices(self.d_eta, self.q)), len(enumerate_indices(self.d_out, self.q)))


def _exp_factorial(v) -> int:
    return math.prod(math.factorial(int(a)) for a in v)


def _compositions(total: int, parts: int):
    """All non-negative integer vectors of length ``parts`` summing to ``total``."""
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 1 - prev - 1)
        yield tuple(out)


def _decompositions(nu: tuple[int, ...], d_out: int):
    """Yield ``[(l_j, k_j), ...]`` with distinct nonzero ``l_j`` and ``sum |k_j| l_j = nu``."""
    d_eta = len(nu)
    candidates = [
        l for l in itertools.product(*(range(a + 1) for a in nu)) if any(l)
    ]
    candidates.sort()

    def rec(start: int, remaining: tuple[int, ...], chosen):
        if not any(remaining):
            yield list(chosen)
            return
        for c in range(start, len(candidates)):
            l = candidates[c]
            max_mult = min(remaining[r] // l[r] for r in range(d_eta) if l[r] > 0)
            for mult in range(1, max_mult + 1):
                rest = tuple(remaining[r] - mult * l[r] for r in range(d_eta))
                for k in _compositions(mult, d_out):
                    chosen.append((l, k))
                    yield from rec(c + 1, rest, chosen)
                    chosen.pop()

    yield from rec(0, tuple(nu), [])


def _build_template(d_eta: int, d_out: int, q: int) -> FaaDiBrunoTemplate:
    eta_fam = enumerate_indices(d_eta, q)
    out_fam = enumerate_indices(d_out, q)
    k_eta = len(eta_fam)
    ones_col = d_out * k_eta
    rows, cols, coeffs, factors = [], [], [], []
    for r, nu_idx in enumerate(eta_fam):
        nu = nu_idx.exponents(d_eta)
        nu_fact = _exp_factorial(nu)
        for parts in _decompositions(nu, d_out):
            lam = [0] * d_out
            denom = 1
            fac = []
            for l, k in parts:
                pos = eta_fam.index_of(MultiIndex.from_exponents(l))
                denom *= _exp_factorial(k) * _exp_factorial(l) ** sum(k)
                for i, ki in enumerate(k):
                    lam[i] += ki
                    fac.extend([i * k_eta + pos] * ki)
            coef = Fraction(nu_fact, denom)
            if coef.denominator != 1:
                raise AssertionError(f"non-integer Faa di Bruno coefficient {coef}")
            rows.append(r)
            cols.append(out_fam.index_of(MultiIndex.from_exponents(lam)))
            coeffs.append(int(coef))
            factors.append(fac + [ones_col] * (q - len(fac)))
    rows = np.array(rows, dtype=np.intp)
    cols = np.array(cols, dtype=np.intp)
    coeffs_arr = np.array(coeffs, dtype=float)
    n_terms = len(rows)
    scatter = sparse.csr_matrix(
        (coeffs_arr, (np.arange(n_terms), rows * len(out_fam) + cols)),
        shape=(n_terms, k_eta * len(out_fam)),
    )
    return FaaDiBrunoTemplate(
        d_eta, d_out, q, rows, cols, coeffs_arr, np.array(factors, dtype=np.intp), scatter
    )


_TEMPLATES: dict[tuple[int, int, int], FaaDiBrunoTemplate] = {}
_LOCK = threading.Lock()


def faa_di_bruno_template(d_eta: int, d_out: int, q: int) -> FaaDiBrunoTemplate:
    key = (int(d_eta), int(d_out), int(q))
    tmpl = _TEMPLATES.get(key)
    if tmpl is None:
        with _LOCK:
            tmpl = _TEMPLATES.get(key)
            if tmpl is None:
                tmpl = _build_template(*key)
                _TEMPLATES[key] = tmpl
    return tmpl


def faa_di_bruno_matrix(md: MeanDerivatives, q: int | None = None) -> np.ndarray:
    """Chain-rule matrices ``M``, one per observation.

    Parameters
    ----------
    md : MeanDerivatives
        Derivatives of the mean map to order at least ``q``.
    q : int, optional
        Order; defaults to ``md.q``.  A lower ``q`` uses the leading blocks.

    Returns
    -------
    ndarray, shape (N, k_q(d_eta), k_q(d_out))
        Rows follow ``enumerate_indices(d_eta, q)``, columns follow
        ``enumerate_indices(d_out, q)``.
    """
    q = md.q if q is None else int(q)
    if q > md.q:
        fam = enumerate_indices(md.d_eta, q)
        missing = [m.entries for m in fam.indices[md.derivs.shape[2]:]]
        raise IncompleteDerivativesError(f"mean derivatives only to order {md.q}; missing {missing}")
    k_eta = len(enumerate_indices(md.d_eta, q))
    tmpl = faa_di_bruno_template(md.d_eta, md.d_out, q)
    n = md.n_obs
    table = np.concatenate(
        [md.derivs[:, :, :k_eta].reshape(n, -1), np.ones((n, 1))], axis=1
    )
    terms = np.prod(table[:, tmpl.factors], axis=2)
    flat = (tmpl.scatter.T @ terms.T).T
    r, c = tmpl.shape
    return np.asarray(flat).reshape(n, r, c)


def block_lower_triangular(M: np.ndarray, d_eta: int, d_out: int, q: int) -> bool:
    """Whether no row of order ``p`` loads on a column of order ``> p``."""
    ro = np.array(enumerate_indices(d_eta, q).orders())
    co = np.array(enumerate_indices(d_out, q).orders())
    mask = co[None, :] > ro[:, None]
    return bool(np.all(M[..., mask] == 0))
