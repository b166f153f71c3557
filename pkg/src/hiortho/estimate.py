"""GMM on orthogonalized moments with sample splitting and cross-fitting.

The pipeline for a team corpus is

1. :func:`make_split`: every eligible author holds out one random
   sole-authored paper; the preliminary log effect is the mean log output of
   the remaining ones.
2. :func:`~hiortho.netdata.build_subsets`: one three-paper subset per
   co-authored paper.
3. :func:`fit_ces`: solve the (orthogonalized) score equations for theta.
4. Average outputs: observed-allocation and random re-allocation.

:func:`cross_fit` repeats this over independent splits and averages.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .models.ces import (
    PARAM_NAMES,
    CesSoloPairModel,
    CesSubsetModel,
    CesTheta,
    average_output_moment,
    ces_log_aggregate,
    clip_gamma,
    expected_team_output,
    expected_team_output_derivatives,
)
from .netdata import TeamCorpus, build_subsets, duo_authors, observed_allocation_average, random_reallocation, subset_arrays
from .ortho import EtaFunctionMoment, ScoreMoment, SingularBasisCovariance, orthogonalized_moment
from .rng import stream

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200


# --------------------------------------------------------------------------
# Solver


@dataclass
class GmmResult:
    estimate: np.ndarray
    moment_norm: float
    iterations: int
    converged: bool
    weight_id: str = "identity"
    boundary: bool = False
    restarts: int = 0
    message: str = ""


def fd_jacobian(fun: Callable, x, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    J = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = rel_step * (1.0 + abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2 * h)
    return J


def _weight_id(W) -> str:
    return "identity" if np.array_equal(W, np.eye(W.shape[0])) else "custom"


def gmm_solve(
    moment_fn: Callable,
    W,
    init,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    project: Callable | None = None,
    seed: int = 0,
) -> GmmResult:
    """Minimize ``g(x)' W g(x)`` by Gauss-Newton with backtracking.

    Parameters
    ----------
    moment_fn : callable
        ``x -> g(x)``, the sample moment vector (dimension >= ``len(x)``).
    W : ndarray
        Symmetric positive definite weight.
    init : array_like
    tol : float
        Convergence threshold on ``sqrt(g' W g)`` for just-identified
        problems.  Otherwise the norm of the first-order condition ``J' W g``
        must fall below ``tol`` times ``max(1, |J| |W g|)``, or the
        Gauss-Newton step below ``tol`` times ``1 + |x|``.
    project : callable, optional
        Maps a trial point back into the admissible set.  A solution that the
        projection moved is flagged as a boundary solution.
    seed : int
        Seeds the single random restart used after a singular Jacobian.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    x = np.asarray(init, dtype=float).copy()
    project = project or (lambda v: v)
    x = project(x)
    restarts = 0
    it = 0
    rng = stream(seed, 7919)

    def norm_of(g):
        return float(math.sqrt(max(g @ W @ g, 0.0))) if np.all(np.isfinite(g)) else np.inf

    def foc_small(J, g):
        # relative to the size of its factors, so Jacobian noise cannot stall it
        scale = max(1.0, float(np.linalg.norm(J) * np.linalg.norm(W @ g)))
        if float(np.linalg.norm(J.T @ W @ g)) <= tol * scale:
            return True
        # the objective is flat to rounding near the optimum; accept a
        # vanishing Gauss-Newton step instead
        try:
            step = np.linalg.lstsq(J.T @ W @ J, J.T @ W @ g, rcond=None)[0]
        except np.linalg.LinAlgError:
            return False
        return float(np.linalg.norm(step)) <= tol * (1.0 + float(np.linalg.norm(x)))

    g = np.atleast_1d(moment_fn(x)).astype(float)
    if g.size < x.size:
        raise ValueError("fewer moments than parameters")
    just = g.size == x.size
    obj = norm_of(g)
    boundary = False
    while it < max_iter:
        if just and obj <= tol:
            break
        J = fd_jacobian(moment_fn, x)
        JW = J.T @ W
        foc = JW @ g
        if not just and foc_small(J, g):
            break
        H = JW @ J
        try:
            if not np.all(np.isfinite(H)) or np.linalg.cond(H) > 1e14:
                raise np.linalg.LinAlgError("singular Jacobian")
            step = -np.linalg.solve(H, foc)
        except np.linalg.LinAlgError:
            if restarts >= 1:
                return GmmResult(x, obj, it, False, _weight_id(W), boundary, restarts, "singular Jacobian")
            restarts += 1
            x = project(x + 0.1 * (1.0 + np.abs(x)) * rng.standard_normal(x.size))
            g = np.atleast_1d(moment_fn(x)).astype(float)
            obj = norm_of(g)
            it += 1
            continue
        t = 1.0
        accepted = False
        for _ in range(40):
            trial = x + t * step
            proj = project(trial)
            gt = np.atleast_1d(moment_fn(proj)).astype(float)
            ot = norm_of(gt)
            if ot < obj or (ot <= obj and ot <= tol):
                accepted = True
                boundary = not np.allclose(proj, trial)
                x, g, obj = proj, gt, ot
                break
            t *= 0.5
        it += 1
        if not accepted:
            break
    if just:
        converged = obj <= tol
    else:
        converged = foc_small(fd_jacobian(moment_fn, x), g)
    msg = "converged" if converged else ("line search failed" if it < max_iter else "max_iter reached")
    return GmmResult(x, obj, it, bool(converged), _weight_id(W), boundary, restarts, msg)


# --------------------------------------------------------------------------
# Splits


class IneligibleAuthorError(ValueError):
    """Authors with fewer than two sole-authored papers."""

    def __init__(self, authors):
        self.authors = list(authors)
        super().__init__(f"{len(self.authors)} authors have fewer than two sole-authored papers: {self.authors[:20]}")


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    split_id: int
    holdout: dict
    preliminary: dict
    ineligible: tuple = ()


def make_split(corpus: TeamCorpus, seed: int, split_id: int = 0, strict: bool = True):
    """Hold out one random sole-authored paper per eligible author.

    Returns
    -------
    plan : SplitPlan
    eta_hat : dict
        Author -> mean log output of the non-held-out sole papers.

    Raises
    ------
    IneligibleAuthorError
        With ``strict=True``, if any author has fewer than two sole papers.
        Otherwise such authors are recorded in ``plan.ineligible`` and get
        neither a held-out paper nor a preliminary effect.
    """
    bad = [a for a in corpus.authors if not corpus.eligible(a)]
    if bad and strict:
        raise IneligibleAuthorError(bad)
    rng = stream(seed, 1, split_id)
    lo = corpus.log_output
    holdout, prelim, eta_hat = {}, {}, {}
    for a in corpus.authors:
        solos = corpus.solo_papers.get(a, ())
        if len(solos) < 2:
            continue
        pick = int(rng.integers(len(solos)))
        holdout[a] = solos[pick]
        rest = solos[:pick] + solos[pick + 1 :]
        prelim[a] = rest
        eta_hat[a] = float(np.mean(lo[list(rest)]))
    return SplitPlan(int(seed), int(split_id), holdout, prelim, tuple(bad)), eta_hat


def all_solo_effects(corpus: TeamCorpus) -> dict[str, float]:
    """Mean log output of every sole-authored paper, per eligible author."""
    lo = corpus.log_output
    return {a: float(np.mean(lo[list(corpus.solo_papers[a])])) for a in corpus.eligible_authors}


# --------------------------------------------------------------------------
# CES estimation


def initial_theta(Y, E, gamma0: float = 0.5) -> np.ndarray:
    """Method-of-moments start: geometric-mean ratio for beta, residual variances."""
    Y = np.asarray(Y, dtype=float)
    E = np.asarray(E, dtype=float)
    log_beta = float(np.mean(Y[:, 0]) - np.mean(E))
    s1 = float(np.mean((Y[:, 1:] - E) ** 2))
    s2 = float(np.mean((Y[:, 0] - log_beta - ces_log_aggregate(E, gamma0)) ** 2))
    return np.array([log_beta, gamma0, np.log(max(s1, 1e-3)), np.log(max(s2, 1e-3))])


GAMMA_MAX = 50.0
PROFILE_GRID = (-3.0, -1.5, -0.6, -0.2, 0.2, 0.6, 1.0, 1.5, 2.5, 4.0, 7.0)


def _project_theta(x):
    x = np.array(x, dtype=float)
    x[1] = clip_gamma(float(np.clip(x[1], -GAMMA_MAX, GAMMA_MAX)))
    x[2:] = np.clip(x[2:], -12.0, 12.0)
    return x


def ces_unit_moments(Y, E, q: int, model=None) -> Callable:
    """``theta -> (n, 4)`` per-subset orthogonalized scores (plug-in scores at ``q = 0``)."""
    model = model or CesSubsetModel()
    score = ScoreMoment()

    def fn(theta):
        theta = np.asarray(theta, dtype=float)
        return orthogonalized_moment(model, score, Y, theta, E, None, q)

    return fn


def _safe_mean(unit, rescale: bool = True):
    """Mean moment as a function of theta, infinite where it cannot be evaluated.

    With ``rescale`` the beta and gamma components are multiplied by
    ``sigma2(2)``.  This keeps the roots but stops the solver from shrinking
    every moment by inflating the team variance.
    """
    def mean_moment(theta):
        try:
            m = unit(theta).mean(axis=0)
        except (SingularBasisCovariance, FloatingPointError, ValueError):
            return np.full(4, np.inf)
        if rescale:
            m[:2] *= np.exp(float(theta[3]))
        return m

    return mean_moment


def _profile_brackets(mean_moment, init, grid, tol, max_iter):
    """Sign changes of the gamma score with the other three parameters re-solved at each grid point."""
    free = [0, 2, 3]
    x = np.asarray(init, dtype=float)[free]
    pts = []
    for g in grid:
        def sub(v, g=g):
            return mean_moment(np.array([v[0], g, v[1], v[2]]))[free]

        r = gmm_solve(sub, np.eye(3), x, tol=tol, max_iter=max_iter)
        if not r.converged:
            continue
        x = r.estimate
        full = np.array([x[0], g, x[1], x[2]])
        pts.append((g, float(mean_moment(full)[1]), full))
    out = []
    for (g0, s0, t0), (g1, s1, t1) in zip(pts, pts[1:]):
        if np.sign(s0) != np.sign(s1):
            w = s0 / (s0 - s1)
            start = (1 - w) * t0 + w * t1
            out.append((abs(start[1] - 1.0), start))
    return [s for _, s in sorted(out, key=lambda p: p[0])]


def fit_ces(
    Y,
    E,
    q: int,
    init=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
    profile_grid=PROFILE_GRID,
) -> GmmResult:
    """Solve the mean orthogonalized score for the internal CES parameter.

    Gauss-Newton starts from :func:`initial_theta`.  If that fails, the
    gamma score is profiled over ``profile_grid`` and the solver restarts
    from every sign change, nearest to ``gamma = 1`` first.  Samples whose
    profiled score keeps one sign have no finite root (the fit improves all
    the way to the max aggregator) and are reported as not converged.
    """
    mean_moment = _safe_mean(ces_unit_moments(Y, E, q))
    init = initial_theta(Y, E) if init is None else np.asarray(init, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        res = gmm_solve(mean_moment, np.eye(4), init, tol=tol, max_iter=max_iter, project=_project_theta, seed=seed)
        if res.converged or not profile_grid:
            return res
        for start in _profile_brackets(mean_moment, init, profile_grid, tol, max_iter):
            alt = gmm_solve(mean_moment, np.eye(4), start, tol=tol, max_iter=max_iter, project=_project_theta, seed=seed)
            if alt.converged:
                alt.restarts += res.restarts + 1
                alt.message = "converged after profile restart"
                return alt
        res.message = f"{res.message}; no root from profile restarts"
        return res


def average_output_estimate(Y, E, theta, q: int) -> float:
    """Orthogonalized (or plug-in at ``q = 0``) mean expected output of the observed teams."""
    model = CesSubsetModel()
    u = orthogonalized_moment(model, average_output_moment(), Y, theta, E, [0.0], q)
    return float(np.mean(u[:, 0]))


def pair_moment() -> EtaFunctionMoment:
    return EtaFunctionMoment(expected_team_output, expected_team_output_derivatives, sign=1)


def orthogonalized_reallocation(theta, eta_hat: dict, holdout_log: dict, authors: Sequence[str], q: int, chunk: int = 20000) -> float:
    """Random re-allocation average, orthogonalized with the two held-out sole papers of each pair.

    ``holdout_log`` maps authors to the log output of their held-out paper,
    which is independent of their preliminary effect.
    """
    authors = list(authors)
    a = np.array([eta_hat[k] for k in authors])
    yh = np.array([holdout_log[k] for k in authors])
    i, j = np.triu_indices(len(authors), k=1)
    model = CesSoloPairModel()
    total = 0.0
    for s in range(0, i.size, chunk):
        ii, jj = i[s : s + chunk], j[s : s + chunk]
        E = np.column_stack([a[ii], a[jj]])
        Yp = np.column_stack([yh[ii], yh[jj]])
        u = orthogonalized_moment(model, pair_moment(), Yp, theta, E, [0.0], q)
        total += float(np.sum(u[:, 0]))
    return total / i.size


@dataclass
class SplitRecord:
    split_id: int
    q: int
    converged: bool
    moment_norm: float
    iterations: int
    n_subsets: int
    beta: float = float("nan")
    gamma: float = float("nan")
    sigma2_1: float = float("nan")
    sigma2_2: float = float("nan")
    avg_output: float = float("nan")
    observed_model_avg: float = float("nan")
    counterfactual: float = float("nan")
    counterfactual_ortho: float = float("nan")
    boundary: bool = False
    message: str = ""

    def params(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in PARAM_NAMES}


@dataclass
class SplitOptions:
    counterfactual: bool = True
    subsample_size: int | None = 1000
    ortho_counterfactual: bool = False
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER


def estimate_split(corpus: TeamCorpus, q_list, seed: int, split_id: int = 0, options: SplitOptions | None = None) -> list[SplitRecord]:
    """Estimate the CES model on one split for each order in ``q_list`` (0 is plug-in)."""
    options = options or SplitOptions()
    plan, eta_hat = make_split(corpus, seed, split_id, strict=False)
    triples, _ = build_subsets(corpus, plan)
    Y, E = subset_arrays(corpus, triples, eta_hat)
    records = []
    for q in ([q_list] if np.isscalar(q_list) else q_list):
        q = int(q)
        rec = SplitRecord(split_id, q, False, float("inf"), 0, len(triples))
        if len(triples) < 5:
            rec.message = "too few subsets"
            records.append(rec)
            continue
        res = fit_ces(Y, E, q, tol=options.tol, max_iter=options.max_iter, seed=seed + split_id)
        rec.converged, rec.moment_norm, rec.iterations = res.converged, res.moment_norm, res.iterations
        rec.boundary, rec.message = res.boundary, res.message
        if np.all(np.isfinite(res.estimate)):
            th = CesTheta.from_internal(res.estimate)
            rec.beta, rec.gamma, rec.sigma2_1, rec.sigma2_2 = th.beta, th.gamma, th.sigma2_1, th.sigma2_2
            if res.converged:
                t = res.estimate
                rec.avg_output = average_output_estimate(Y, E, t, q)
                rec.observed_model_avg = observed_allocation_average(t, corpus, eta_hat)
                if options.counterfactual:
                    pool = duo_authors(corpus, eta_hat)
                    size = None if options.subsample_size is None else min(options.subsample_size, len(pool))
                    effects = np.array([eta_hat[a] for a in pool])
                    rec.counterfactual = random_reallocation(t, effects, size, seed=seed * 1_000_003 + split_id)
                    if options.ortho_counterfactual and q > 0:
                        lo = corpus.log_output
                        hl = {a: float(lo[plan.holdout[a]]) for a in pool}
                        rec.counterfactual_ortho = orthogonalized_reallocation(t, eta_hat, hl, pool, q)
        records.append(rec)
    return records


def _split_task(args):
    corpus, q_list, seed, split_id, options = args
    return estimate_split(corpus, q_list, seed, split_id, options)


def run_parallel(fn, tasks, workers: int = 1):
    """Map ``fn`` over ``tasks`` preserving order; process pool when ``workers > 1``."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


@dataclass
class CrossFitResult:
    q: int
    n_splits: int
    n_failed: int
    estimates: dict
    records: list = field(default_factory=list)

    def table(self) -> list[dict]:
        return [asdict(r) for r in self.records]


AGG_FIELDS = PARAM_NAMES + ("avg_output", "observed_model_avg", "counterfactual", "counterfactual_ortho")


def aggregate_splits(records: Sequence[SplitRecord]) -> tuple[dict, int]:
    """Arithmetic mean across converged splits; returns ``(means, n_failed)``."""
    ok = [r for r in records if r.converged]
    failed = len(records) - len(ok)
    means = {}
    for f in AGG_FIELDS:
        vals = [getattr(r, f) for r in ok if np.isfinite(getattr(r, f))]
        means[f] = float(np.mean(vals)) if vals else float("nan")
    return means, failed


def cross_fit(corpus: TeamCorpus, q, n_splits: int, seed: int, workers: int = 1, options: SplitOptions | None = None):
    """Average estimates over ``n_splits`` independent splits.

    ``q`` may be an int or a list of orders; a list returns one
    :class:`CrossFitResult` per order.  Failed splits are excluded and
    counted.
    """
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    q_list = [q] if np.isscalar(q) else list(q)
    tasks = [(corpus, q_list, seed, s, options) for s in range(n_splits)]
    per_split = run_parallel(_split_task, tasks, workers)
    results = []
    for k, qq in enumerate(q_list):
        recs = [recs_s[k] for recs_s in per_split]
        means, failed = aggregate_splits(recs)
        if failed:
            log.warning("q=%d: %d of %d splits failed and were excluded", qq, failed, n_splits)
        results.append(CrossFitResult(int(qq), n_splits, failed, means, recs))
    return results[0] if np.isscalar(q) else results


# --------------------------------------------------------------------------
# Variance


class RankDeficientJacobian(np.linalg.LinAlgError):
    pass


@dataclass
class SandwichVariance:
    G_mu: np.ndarray
    G_theta: np.ndarray | None
    V_xi: np.ndarray
    covariance: np.ndarray
    n: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _unit_jacobian(fn, x, rel_step=1e-6) -> np.ndarray:
    """Average over units of ``d u_i / d x'`` with ``fn(x) -> (n, m)``."""
    return fd_jacobian(lambda v: fn(v).mean(axis=0), x, rel_step)


def sandwich_variance(u_mu: Callable, mu_hat, W=None, u_theta: Callable | None = None, theta_hat=None) -> SandwichVariance:
    """Plug-in GMM sandwich with a first-step correction for theta.

    Parameters
    ----------
    u_mu : callable
        ``(mu, theta) -> (n, m)`` per-unit moments for the target ``mu``.
        When ``u_theta`` is None it is called as ``u_mu(mu, None)``.
    mu_hat : array_like
    W : ndarray, optional
        Weight for the ``mu`` moments; identity by default.
    u_theta : callable, optional
        ``theta -> (n, k)`` just-identified moments that determined
        ``theta_hat``.  Their influence ``psi_i = -Gt^{-1} ut_i`` enters
        ``xi_i = u_i + G_theta psi_i``.
    """
    mu_hat = np.atleast_1d(np.asarray(mu_hat, dtype=float))
    th = None if theta_hat is None else np.atleast_1d(np.asarray(theta_hat, dtype=float))
    U = np.asarray(u_mu(mu_hat, th), dtype=float)
    n, m = U.shape
    W = np.eye(m) if W is None else np.asarray(W, dtype=float)
    G_mu = _unit_jacobian(lambda v: u_mu(v, th), mu_hat)
    if np.linalg.matrix_rank(G_mu) < mu_hat.size:
        raise RankDeficientJacobian("rank(G_mu) < dim(mu)")
    xi = U.copy()
    G_theta = None
    if u_theta is not None:
        G_theta = _unit_jacobian(lambda v: u_mu(mu_hat, v), th)
        Ut = np.asarray(u_theta(th), dtype=float)
        Gt = _unit_jacobian(u_theta, th)
        psi = -np.linalg.solve(Gt, Ut.T).T
        xi = xi + psi @ G_theta.T
    xc = xi - xi.mean(axis=0)
    V = xc.T @ xc / n
    bread = np.linalg.inv(G_mu.T @ W @ G_mu)
    cov = bread @ G_mu.T @ W @ V @ W @ G_mu @ bread / n
    cov = 0.5 * (cov + cov.T)
    return SandwichVariance(G_mu, G_theta, V, cov, n)


def internal_to_natural_jacobian(theta_internal) -> np.ndarray:
    """Jacobian of ``(beta, gamma, sigma2_1, sigma2_2)`` with respect to the internal parameter."""
    t = np.asarray(theta_internal, dtype=float)
    return np.diag([np.exp(t[0]), 1.0, np.exp(t[2]), np.exp(t[3])])


def ces_sandwich(Y, E, theta_internal, q: int) -> dict:
    """Sandwich standard errors of theta (natural units) and of the average output."""
    unit = ces_unit_moments(Y, E, q)
    tv = sandwich_variance(lambda mu, _th: unit(mu), theta_internal)
    J = internal_to_natural_jacobian(theta_internal)
    cov_nat = J @ tv.covariance @ J.T
    model = CesSubsetModel()
    mom = average_output_moment()

    def u_avg(mu, th):
        return orthogonalized_moment(model, mom, Y, th, E, mu, q)

    mu_hat = [average_output_estimate(Y, E, theta_internal, q)]
    av = sandwich_variance(u_avg, mu_hat, u_theta=unit, theta_hat=theta_internal)
    out = {k: float(np.sqrt(max(cov_nat[i, i], 0.0))) for i, k in enumerate(PARAM_NAMES)}
    out["avg_output"] = float(av.se[0])
    return out


# --------------------------------------------------------------------------
# Bootstrap


@dataclass
class BootstrapResult:
    B: int
    n_success: int
    se: dict
    quantiles: dict
    rows: list
    sufficient: bool


def _boot_task(args):
    from .mc import simulate_corpus

    corpus, theta, effects, q, inner_splits, seed, b, options = args
    sim = simulate_corpus(corpus, theta, effects, seed=seed, rep=b)
    res = cross_fit(sim, q, inner_splits, seed=seed * 7 + b + 1, workers=1, options=options)
    row = {"replication": b, "n_failed_splits": res.n_failed}
    row.update(res.estimates)
    row["ok"] = res.n_failed < inner_splits
    return row


def parametric_bootstrap(
    corpus: TeamCorpus,
    theta: CesTheta,
    effects: dict[str, float],
    B: int,
    q: int = 2,
    inner_splits: int = 10,
    seed: int = 0,
    min_success: float = 0.9,
    workers: int = 1,
    options: SplitOptions | None = None,
) -> BootstrapResult:
    """Simulate ``B`` corpora at ``(theta, effects)`` on the same network and re-estimate.

    Standard errors are standard deviations across successful replications;
    ``sufficient`` is False when fewer than ``min_success * B`` succeed.
    """
    tasks = [(corpus, theta, effects, q, inner_splits, seed, b, options) for b in range(B)]
    rows = run_parallel(_boot_task, tasks, workers)
    ok = [r for r in rows if r["ok"]]
    se, quant = {}, {}
    for f in AGG_FIELDS:
        vals = np.array([r[f] for r in ok if np.isfinite(r[f])])
        se[f] = float(np.std(vals, ddof=1)) if vals.size > 1 else float("nan")
        quant[f] = [float(v) for v in np.quantile(vals, [0.025, 0.5, 0.975])] if vals.size else []
    sufficient = len(ok) >= min_success * B
    if not sufficient:
        log.warning("bootstrap: only %d of %d replications succeeded", len(ok), B)
    return BootstrapResult(B, len(ok), se, quant, rows, sufficient)

