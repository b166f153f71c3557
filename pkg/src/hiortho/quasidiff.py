"""Effect-free GMM for the substitution parameter by quasi-differencing.

Within co-authored papers, ``Y_j^gamma`` is linear in author-specific terms
plus a mean-zero error.  With ``A`` the (papers x authors) 0/1 incidence
matrix, ``(I - A A^+) Y(gamma_0)`` has mean zero whatever the effects, and
instruments built from independent preliminary effects give the scalar
moment

    g(gamma) = Z' (I - A A^+) Y(gamma).

``Y(0)`` is the ones vector, which lies in the column space of ``A``, so
``g(0) = 0`` on every sample: ``gamma = 0`` is always a spurious root.  The
estimator looks for other minima of ``|g|`` and flags samples where none
exists.

The projector is nonzero only when the co-authorship graph has cycles
(repeated pairs count), since a forest has full-row-rank incidence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

DEFAULT_GRID = np.linspace(-3.0, 3.0, 121)
ZERO_EXCLUSION = 0.05


@dataclass
class QuasiDiffResult:
    gamma_hat: float
    boundary_flag: bool
    objective: float
    n_teams: int
    residual_dim: int
    candidates: tuple = ()


def incidence_matrix(pairs, authors=None):
    """0/1 matrix with one row per pair and ones in its two author columns."""
    authors = sorted({a for p in pairs for a in p}) if authors is None else list(authors)
    col = {a: k for k, a in enumerate(authors)}
    A = np.zeros((len(pairs), len(authors)))
    for r, (a1, a2) in enumerate(pairs):
        A[r, col[a1]] = 1.0
        A[r, col[a2]] = 1.0
    return A, authors


def residual_projector_basis(A, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis ``U`` of ``col(A)``; the projector is ``I - U U'``."""
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > tol * max(s.max(initial=0.0), 1.0)))
    return U[:, :r]


def project_out(U, v) -> np.ndarray:
    """``(I - A A^+) v`` given the basis from :func:`residual_projector_basis`."""
    v = np.asarray(v, dtype=float)
    return v - U @ (U.T @ v)


def quasi_diff_objective(log_y, pz):
    """``gamma -> |pz' exp(gamma log_y)|`` for a pre-projected instrument ``pz``."""
    log_y = np.asarray(log_y, dtype=float)

    def f(gamma):
        return abs(float(pz @ np.exp(gamma * log_y)))

    return f


def quasi_diff_gamma(corpus, eta_hat: dict, gamma_grid=None, seed: int = 0, zero_exclusion: float = ZERO_EXCLUSION) -> QuasiDiffResult:
    """Quasi-differencing GMM estimate of the CES substitution parameter.

    Parameters
    ----------
    corpus : TeamCorpus
    eta_hat : dict
        Preliminary log effects from an independent sample; co-authored
        papers with an author missing from it are dropped.
    gamma_grid : array_like, optional
        Sorted grid used to bracket local minima of ``|g|``.
    seed : int
        Unused by the deterministic search; kept so the signature matches the
        other estimators and the CLI.
    zero_exclusion : float
        Brackets reaching within this distance of zero are treated as the
        spurious root.

    Returns
    -------
    QuasiDiffResult
        ``boundary_flag`` is True when no interior minimum exists, in which
        case ``gamma_hat = 0``.
    """
    grid = np.sort(np.asarray(DEFAULT_GRID if gamma_grid is None else gamma_grid, dtype=float))
    if grid.size < 3:
        raise ValueError("gamma grid needs at least three points")
    lo = corpus.log_output
    duos = [j for j in corpus.duo_papers if all(a in eta_hat for a in corpus.papers[j].authors)]
    if not duos:
        raise ValueError("no co-authored paper with preliminary effects for both authors")
    pairs = [corpus.papers[j].authors for j in duos]
    A, _ = incidence_matrix(pairs)
    U = residual_projector_basis(A)
    z = np.array([np.exp(eta_hat[a1] + eta_hat[a2]) for a1, a2 in pairs])
    pz = project_out(U, z)
    log_y = lo[list(duos)]
    f = quasi_diff_objective(log_y, pz)
    # the cosine version is scale free, so minima at different gamma are comparable
    ynorm = lambda g: float(np.linalg.norm(np.exp(g * log_y)))  # noqa: E731
    zn = float(np.linalg.norm(pz))
    resid_dim = len(duos) - U.shape[1]
    if zn == 0.0:
        return QuasiDiffResult(0.0, True, 0.0, len(duos), resid_dim)

    vals = np.array([f(g) for g in grid])
    cands = []
    for i in range(1, grid.size - 1):
        a, b, c = grid[i - 1], grid[i], grid[i + 1]
        if not (vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1]):
            continue
        if a - zero_exclusion <= 0.0 <= c + zero_exclusion:
            continue
        if vals[i] < vals[i - 1] and vals[i] < vals[i + 1]:
            res = minimize_scalar(f, bracket=(a, b, c), method="golden", tol=1e-10)
            g, v = float(res.x), float(res.fun)
        else:
            g, v = float(b), float(vals[i])
        cands.append((v / (zn * ynorm(g)), g, v))
    if not cands:
        return QuasiDiffResult(0.0, True, 0.0, len(duos), resid_dim)
    cands.sort()
    _, g, v = cands[0]
    return QuasiDiffResult(g, False, v, len(duos), resid_dim, tuple((c[1], c[2]) for c in cands))
