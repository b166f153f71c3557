"""Synthetic team corpora and the Monte Carlo study harness.

A study fixes one co-authorship topology and one set of true author effects,
then redraws the errors in every replication, estimates on a single
sample split, and summarizes the estimates by median, mean and 2.5/97.5%
quantiles.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .estimate import fit_ces, make_split, run_parallel
from .models.ces import PARAM_NAMES, CesTheta, ces_log_aggregate
from .netdata import Paper, TeamCorpus, build_subsets, subset_arrays
from .quasidiff import quasi_diff_gamma
from .rng import stream

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Topology


@dataclass(frozen=True)
class TopologyConfig:
    """Synthetic co-authorship network with author effects.

    Every author gets at least two sole-authored papers; the remaining sole
    papers are spread with log-normal productivity weights, giving a heavy
    right tail.  First authors of co-authored papers are drawn in
    proportion to productivity.  With probability ``repeat_prob`` the first
    author repeats an earlier collaboration; otherwise the partner is the
    author whose standardized log effect is nearest to
    ``sorting * z_first + sqrt(1 - sorting^2) * noise``.
    """

    n_authors: int = 500
    n_papers: int = 3000
    duo_share: float = 0.10
    effect_sd: float = 1.0
    effect_mean: float = 0.0
    sorting: float = 0.0
    repeat_prob: float = 0.3
    productivity_sd: float = 1.0
    seed: int = 0

    def validate(self):
        if self.n_authors < 3:
            raise ValueError("need at least three authors")
        n_duo = int(round(self.duo_share * self.n_papers))
        if self.n_papers - n_duo < 2 * self.n_authors:
            raise ValueError("too few sole-authored papers for two per author")
        if not -1.0 < self.sorting < 1.0:
            raise ValueError("sorting must lie in (-1, 1)")
        if not 0.0 <= self.repeat_prob < 1.0:
            raise ValueError("repeat_prob must lie in [0, 1)")
        if self.effect_sd < 0:
            raise ValueError("effect_sd must be nonnegative")


def author_id(k: int) -> str:
    return f"a{k:05d}"


def generate_topology(config: TopologyConfig = TopologyConfig()) -> tuple[TeamCorpus, dict[str, float]]:
    """Draw a network and true log effects.

    Returns
    -------
    topology : TeamCorpus
        Outputs are placeholders equal to 1.
    effects : dict
        Author -> true log effect.
    """
    config.validate()
    rng = stream(config.seed, 3)
    n = config.n_authors
    n_duo = int(round(config.duo_share * config.n_papers))
    n_solo = config.n_papers - n_duo
    z = rng.standard_normal(n)
    effects = config.effect_mean + config.effect_sd * z
    weights = rng.lognormal(0.0, config.productivity_sd, size=n)
    counts = 2 + rng.multinomial(n_solo - 2 * n, weights / weights.sum())

    order = np.argsort(z)
    z_sorted = z[order]
    p_first = counts / counts.sum()
    partners: dict[int, list[int]] = {}
    duos = []
    for _ in range(n_duo):
        k = int(rng.choice(n, p=p_first))
        prev = partners.get(k, [])
        if prev and rng.random() < config.repeat_prob:
            m = int(prev[rng.integers(len(prev))])
        else:
            target = config.sorting * z[k] + np.sqrt(1.0 - config.sorting ** 2) * rng.standard_normal()
            pos = int(np.clip(np.searchsorted(z_sorted, target), 0, n - 1))
            cand = [order[p] for p in range(max(pos - 1, 0), min(pos + 2, n)) if order[p] != k]
            m = int(min(cand, key=lambda c: abs(z[c] - target)))
        partners.setdefault(k, []).append(m)
        partners.setdefault(m, []).append(k)
        duos.append(tuple(sorted((author_id(k), author_id(m)))))

    papers = []
    for k in range(n):
        for r in range(int(counts[k])):
            papers.append(Paper(f"s{k:05d}_{r:03d}", (author_id(k),), 1.0))
    for r, pair in enumerate(duos):
        papers.append(Paper(f"d{r:05d}", pair, 1.0))
    return TeamCorpus(tuple(papers)), {author_id(k): float(effects[k]) for k in range(n)}


def simulate_corpus(topology: TeamCorpus, theta0: CesTheta, effects0: dict[str, float], seed: int, rep: int = 0) -> TeamCorpus:
    """Draw log-normal outputs on a fixed topology.

    Sole papers have log output ``a_k + sigma(1) eps``; co-authored papers
    ``log beta + F(a_k1, a_k2) + sigma(2) eps``, with standard normal errors.
    The draw depends only on ``(seed, rep)``.
    """
    missing = [a for a in topology.authors if a not in effects0]
    if missing:
        raise ValueError(f"no effect for {len(missing)} authors, e.g. {missing[:5]}")
    rng = stream(seed, 2, rep)
    eps = rng.standard_normal(len(topology.papers))
    mean = np.empty(len(topology.papers))
    s1, s2 = np.sqrt(theta0.sigma2_1), np.sqrt(theta0.sigma2_2)
    scale = np.empty_like(mean)
    duo_idx = np.array(topology.duo_papers, dtype=int)
    solo_mask = np.ones(len(topology.papers), dtype=bool)
    solo_mask[duo_idx] = False
    solo_idx = np.flatnonzero(solo_mask)
    mean[solo_idx] = [effects0[topology.papers[j].authors[0]] for j in solo_idx]
    scale[solo_idx] = s1
    if duo_idx.size:
        a = np.array([[effects0[x] for x in topology.papers[j].authors] for j in duo_idx])
        mean[duo_idx] = np.log(theta0.beta) + ces_log_aggregate(a, theta0.gamma)
        scale[duo_idx] = s2
    return topology.with_outputs(np.exp(mean + scale * eps))


def effects_for_simulation(corpus: TeamCorpus) -> dict[str, float]:
    """Mean sole-paper log output per author; authors without sole papers get the overall mean."""
    lo = corpus.log_output
    eff = {a: float(np.mean(lo[list(ix)])) for a, ix in corpus.solo_papers.items()}
    fill = float(np.mean(list(eff.values()))) if eff else 0.0
    return {a: eff.get(a, fill) for a in corpus.authors}


# --------------------------------------------------------------------------
# Study


@dataclass
class McStudyConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    theta0: CesTheta = field(default_factory=lambda: CesTheta(1.0, 1.0, 1.0, 1.0))
    n_reps: int = 300
    q_list: tuple = (0, 2)
    seed: int = 0
    estimator: str = "ces"
    workers: int = 1

    def validate(self):
        if self.n_reps < 1:
            raise ValueError("n_reps must be >= 1")
        if not self.q_list or any(int(q) != q or not 0 <= q <= 6 for q in self.q_list):
            raise ValueError("q_list entries must be integers in 0..6 (0 is plug-in)")
        if self.estimator not in ("ces", "quasi-diff"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        self.topology.validate()


def estimator_label(q: int) -> str:
    return "plug-in" if q == 0 else f"q={q}"


def _replication(args):
    config, topology, effects, rep = args
    sim = simulate_corpus(topology, config.theta0, effects, config.seed, rep)
    plan, eta_hat = make_split(sim, config.seed, rep, strict=False)
    rows = []
    if config.estimator == "quasi-diff":
        res = quasi_diff_gamma(sim, eta_hat)
        rows.append({"rep": rep, "estimator": "quasi-diff", "ok": True, "gamma": res.gamma_hat, "boundary": res.boundary_flag})
        return rows
    triples, _ = build_subsets(sim, plan)
    Y, E = subset_arrays(sim, triples, eta_hat)
    for q in config.q_list:
        row = {"rep": rep, "estimator": estimator_label(q), "ok": False}
        try:
            res = fit_ces(Y, E, int(q), seed=config.seed + rep)
        except Exception as exc:  # a failed replication is counted, not fatal
            row["message"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        row["ok"] = bool(res.converged)
        row["boundary"] = bool(res.boundary)
        if res.converged:
            row.update(CesTheta.from_internal(res.estimate).as_dict())
        rows.append(row)
    return rows


@dataclass
class McReport:
    """Summary rows keyed by ``(parameter, estimator)``."""

    rows: list
    replications: list
    config: dict

    COLUMNS = ("parameter", "estimator", "Median", "Mean", "q2.5", "q97.5", "SD", "n_ok", "n_failed", "n_boundary")

    def get(self, parameter: str, estimator: str) -> dict:
        for r in self.rows:
            if r["parameter"] == parameter and r["estimator"] == estimator:
                return r
        raise KeyError((parameter, estimator))

    def values(self, parameter: str, estimator: str) -> np.ndarray:
        return np.array([r[parameter] for r in self.replications if r["estimator"] == estimator and r["ok"] and parameter in r])

    def write(self, outdir) -> dict[str, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {"replications": outdir / "mc_replications.csv", "aggregate": outdir / "mc_aggregate.csv", "summary": outdir / "mc_summary.json"}
        keys = ["rep", "estimator", "ok", "boundary", *PARAM_NAMES, "message"]
        with open(paths["replications"], "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
            w.writeheader()
            for r in self.replications:
                w.writerow({k: _fmt(r.get(k, "")) for k in keys})
        with open(paths["aggregate"], "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r[k]) for k in self.COLUMNS})
        with open(paths["summary"], "w") as fh:
            json.dump({"config": self.config, "rows": self.rows}, fh, indent=2, sort_keys=True)
        return paths


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def summarize(replications: list, n_reps: int) -> list[dict]:
    """Median, mean, quantiles and counts per (parameter, estimator)."""
    estimators = list(dict.fromkeys(r["estimator"] for r in replications))
    params = [p for p in PARAM_NAMES if any(p in r for r in replications)]
    rows = []
    for est in estimators:
        recs = [r for r in replications if r["estimator"] == est]
        ok = [r for r in recs if r["ok"]]
        for p in params:
            v = np.array([r[p] for r in ok if p in r], dtype=float)
            qs = np.quantile(v, [0.5, 0.025, 0.975]) if v.size else [np.nan] * 3
            rows.append(
                {
                    "parameter": p,
                    "estimator": est,
                    "Median": float(qs[0]),
                    "Mean": float(v.mean()) if v.size else float("nan"),
                    "q2.5": float(qs[1]),
                    "q97.5": float(qs[2]),
                    "SD": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                    "n_ok": int(v.size),
                    "n_failed": n_reps - int(v.size),
                    "n_boundary": int(sum(bool(r.get("boundary")) for r in recs)),
                }
            )
    return rows


def run_study(config: McStudyConfig, topology=None, effects=None) -> McReport:
    """Run ``config.n_reps`` replications on one fixed topology.

    ``topology`` and ``effects`` default to :func:`generate_topology` of
    ``config.topology``.  Replications run in a process pool when
    ``config.workers > 1`` and are reduced in replication order.
    """
    config.validate()
    if topology is None:
        topology, gen_effects = generate_topology(config.topology)
        effects = gen_effects if effects is None else effects
    elif effects is None:
        raise ValueError("a loaded topology needs effects")
    tasks = [(config, topology, effects, rep) for rep in range(config.n_reps)]
    reps = [row for rows in run_parallel(_replication, tasks, config.workers) for row in rows]
    cfg = {
        "topology": asdict(config.topology),
        "theta0": config.theta0.as_dict(),
        "n_reps": config.n_reps,
        "q_list": list(config.q_list),
        "seed": config.seed,
        "estimator": config.estimator,
        "network": topology.summary(),
    }
    return McReport(summarize(reps, config.n_reps), reps, cfg)


# --------------------------------------------------------------------------
# Neyman-Scott sub-study


@dataclass
class NeymanScottSplitStudy:
    mean_bias: float
    mc_se: float
    predicted_bias: float
    n_reps: int


def neyman_scott_split_study(N: int, T_prelim: int, T_est: int, sigma2: float, n_reps: int, seed: int = 0) -> NeymanScottSplitStudy:
    """Plug-in variance estimator with effects from an independent sample.

    Each unit has ``T_prelim`` observations for its preliminary mean and
    ``T_est`` observations for ``mean((Y - eta_hat)^2)``.  The bias of that
    estimator is the mean squared error of ``eta_hat``, ``sigma2 / T_prelim``.
    """
    if T_prelim < 1 or T_est < 1:
        raise ValueError("both subsamples need at least one period")
    rng = stream(seed, 5)
    s = np.sqrt(sigma2)
    est = np.empty(n_reps)
    for r in range(n_reps):
        eta = rng.standard_normal(N)
        pre = eta[:, None] + s * rng.standard_normal((N, T_prelim))
        y = eta[:, None] + s * rng.standard_normal((N, T_est))
        est[r] = np.mean((y - pre.mean(axis=1, keepdims=True)) ** 2)
    bias = est - sigma2
    return NeymanScottSplitStudy(float(bias.mean()), float(bias.std(ddof=1) / np.sqrt(n_reps)), sigma2 / T_prelim, n_reps)
