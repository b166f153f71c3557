"""Command-line interface.

Every subcommand validates its inputs before doing any work, supports
``--dry-run``, and writes JSON/CSV results to the output directory
(``--out``, else ``$HIORTHO_OUTPUT_DIR``, else ``./hiortho_out``).

Exit status: 0 on success, 2 on invalid configuration, 3 when estimation
fails at run time (an ``error.json`` diagnostics record is written).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
import traceback
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .estimate import (
    SplitOptions,
    ces_sandwich,
    cross_fit,
    fit_ces,
    make_split,
    parametric_bootstrap,
)
from .mc import McStudyConfig, TopologyConfig, effects_for_simulation, generate_topology, run_study, simulate_corpus
from .models.ces import PARAM_NAMES, CesSubsetModel, CesTheta
from .models.neyman_scott import NeymanScottModel
from .netdata import CorpusFormatError, build_subsets, load_corpus, subset_arrays, write_corpus
from .ortho import ScoreMoment, orthogonality_check
from .quasidiff import quasi_diff_gamma

SCHEMA_VERSION = "1.0"
ENV_OUTPUT = "HIORTHO_OUTPUT_DIR"
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("hiortho")


class ConfigError(ValueError):
    """Invalid user configuration (exit status 2)."""


# --------------------------------------------------------------------------
# Parsing


def _common(p: argparse.ArgumentParser, splits: bool = True):
    p.add_argument("--config", type=Path, help="INI file with a [run] section; flags override it")
    p.add_argument("--out", type=Path, help=f"output directory (default ${ENV_OUTPUT} or ./hiortho_out)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--dry-run", action="store_true", help="validate and print the plan without computing")
    p.add_argument("-v", "--verbose", action="store_true")
    if splits:
        p.add_argument("--q", type=int, default=None, help="orthogonalization order (0 = plug-in, default 2)")
        p.add_argument("--splits", type=int, default=None, help="number of cross-fitting splits")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiortho", description="Higher-order orthogonal moment estimation for team production data")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic corpus")
    _common(p, splits=False)
    p.add_argument("--authors", type=int, default=None)
    p.add_argument("--papers", type=int, default=None)
    p.add_argument("--duo-share", type=float, default=None)
    p.add_argument("--sorting", type=float, default=None)
    for name in PARAM_NAMES:
        p.add_argument(f"--{name.replace('_', '-')}", type=float, default=None)

    for name, helptext in (
        ("estimate", "cross-fitted estimates of the CES parameters"),
        ("counterfactual", "random re-allocation counterfactual"),
        ("quasi-diff", "effect-free GMM estimate of gamma"),
        ("bootstrap", "parametric bootstrap standard errors"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("corpus", type=Path)
        p.add_argument("--delimiter", default=None)
        p.add_argument("--net-time-effects", action="store_true", default=None)
        if name in ("estimate", "counterfactual"):
            p.add_argument("--subsample", type=int, default=None, help="authors per counterfactual subsample")
        if name == "estimate":
            p.add_argument("--se", action="store_true", default=None, help="sandwich standard errors on split 0")
        if name == "bootstrap":
            p.add_argument("--B", type=int, default=None)
            p.add_argument("--inner-splits", type=int, default=None)

    p = sub.add_parser("check-orthogonality", help="numerical check of the orthogonality property")
    _common(p, splits=False)
    p.add_argument("--q", type=int, default=None)
    p.add_argument("--model", choices=("neyman-scott", "ces"), default=None)
    p.add_argument("--T", type=int, default=None, help="periods for the panel model")
    p.add_argument("--points", type=int, default=None, help="random evaluation points")

    p = sub.add_parser("mc-study", help="Monte Carlo study from a config file")
    _common(p, splits=False)
    p.add_argument("study", type=Path)
    return parser


DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "q": 2,
    "splits": 10,
    "delimiter": ",",
    "net_time_effects": False,
    "subsample": 1000,
    "se": False,
    "B": 200,
    "inner_splits": 10,
    "model": "neyman-scott",
    "T": 4,
    "points": 5,
    "authors": 500,
    "papers": 3000,
    "duo_share": 0.10,
    "sorting": 0.0,
    "beta": 1.0,
    "gamma": 1.0,
    "sigma2_1": 1.0,
    "sigma2_2": 1.0,
}

POSITIVE_INT = ("splits", "workers", "B", "inner_splits", "T", "points", "authors", "papers", "subsample")


def _coerce(key, raw: str):
    target = type(DEFAULTS[key])
    try:
        if target is bool:
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        return target(raw)
    except (ValueError, KeyError):
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {target.__name__}") from None


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file's [run] section and flags; validate."""
    present = {k for k in vars(args)}
    cfg = {k: v for k, v in DEFAULTS.items() if k in present}
    if getattr(args, "config", None) is not None:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(args.config):
            raise ConfigError(f"cannot read config file {args.config}")
        unknown_sections = [s for s in cp.sections() if s != "run"]
        if unknown_sections:
            raise ConfigError(f"unknown config sections: {unknown_sections}")
        if cp.has_section("run"):
            for key, raw in cp.items("run"):
                k = key.replace("-", "_")
                if k not in cfg:
                    raise ConfigError(f"unknown config key {key!r} for {args.command}")
                cfg[k] = _coerce(k, raw)
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    for k in POSITIVE_INT:
        if k in cfg and cfg[k] < 1:
            raise ConfigError(f"{k} must be >= 1, got {cfg[k]}")
    if "q" in cfg and not 0 <= cfg["q"] <= 6:
        raise ConfigError(f"q must be in 0..6, got {cfg['q']}")
    if "duo_share" in cfg and not 0 < cfg["duo_share"] < 1:
        raise ConfigError("duo-share must lie in (0, 1)")
    for name in PARAM_NAMES:
        if name in cfg and name != "gamma" and not cfg[name] > 0:
            raise ConfigError(f"{name} must be positive")
    if "gamma" in cfg and cfg["gamma"] == 0:
        raise ConfigError("gamma must be nonzero")
    corpus = getattr(args, "corpus", None)
    if corpus is not None and not Path(corpus).is_file():
        raise ConfigError(f"corpus file not found: {corpus}")
    return cfg


def output_dir(args) -> Path:
    if getattr(args, "out", None) is not None:
        return Path(args.out)
    return Path(os.environ.get(ENV_OUTPUT, "hiortho_out"))


# --------------------------------------------------------------------------
# Output helpers


def _envelope(command: str, payload: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        **payload,
    }


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, command: str, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_clean(_envelope(command, payload)), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_split_csv(path: Path, records) -> Path:
    """Long format: parameter, split_id, estimate, converged, moment_norm (plus q)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "q", "split_id", "estimate", "converged", "moment_norm"])
        for r in records:
            for name in PARAM_NAMES + ("avg_output", "observed_model_avg", "counterfactual", "counterfactual_ortho"):
                w.writerow([name, r.q, r.split_id, repr(float(getattr(r, name))), r.converged, repr(float(r.moment_norm))])
    return path


def format_table(rows: dict, se: dict | None = None, title: str = "") -> str:
    """Parameters as rows, one column per order; standard errors in parentheses."""
    orders = list(rows)
    names = list(next(iter(rows.values())).keys()) if rows else []
    head = f"{'':<20}" + "".join(f"{('plug-in' if q == 0 else f'q={q}'):>16}" for q in orders)
    lines = [title, head] if title else [head]
    for n in names:
        line = f"{n:<20}" + "".join(f"{rows[q][n]:>16.4f}" for q in orders)
        lines.append(line)
        if se:
            lines.append(f"{'':<20}" + "".join(f"{'(' + format(se.get(q, {}).get(n, float('nan')), '.4f') + ')':>16}" for q in orders))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Commands


def _load(args, cfg):
    try:
        corpus, report = load_corpus(args.corpus, delimiter=cfg["delimiter"], net_time_effects=cfg["net_time_effects"])
    except CorpusFormatError as exc:
        details = "; ".join(f"line {ln}: {msg}" for ln, msg in exc.problems[:10])
        raise ConfigError(f"{exc} {details}".strip()) from None
    return corpus, report


def _q_list(q: int) -> list[int]:
    return [0] if q == 0 else [0, q]


def cmd_simulate(args, cfg, out: Path) -> dict:
    topo = TopologyConfig(
        n_authors=cfg["authors"], n_papers=cfg["papers"], duo_share=cfg["duo_share"], sorting=cfg["sorting"], seed=cfg["seed"]
    )
    theta = CesTheta(cfg["beta"], cfg["gamma"], cfg["sigma2_1"], cfg["sigma2_2"])
    try:
        topo.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.dry_run:
        return {"plan": {"topology": asdict(topo), "theta": theta.as_dict(), "outputs": ["corpus.csv", "effects.csv", "simulate.json"]}}
    top, effects = generate_topology(topo)
    corpus = simulate_corpus(top, theta, effects, cfg["seed"])
    write_corpus(corpus, out / "corpus.csv")
    with open(out / "effects.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["author", "log_effect"])
        for a in sorted(effects):
            w.writerow([a, repr(effects[a])])
    payload = {"topology": asdict(topo), "theta": theta.as_dict(), "summary": corpus.summary()}
    write_json(out / "simulate.json", "simulate", payload)
    print(f"wrote {len(corpus)} papers by {len(corpus.authors)} authors to {out / 'corpus.csv'}")
    return payload


def cmd_estimate(args, cfg, out: Path) -> dict:
    corpus, report = _load(args, cfg)
    qs = _q_list(cfg["q"])
    plan = {"corpus": str(args.corpus), "papers": len(corpus), "q": qs, "splits": cfg["splits"], "seed": cfg["seed"], "workers": cfg["workers"]}
    if args.dry_run:
        return {"plan": plan}
    opts = SplitOptions(subsample_size=cfg["subsample"])
    results = cross_fit(corpus, qs, cfg["splits"], cfg["seed"], workers=cfg["workers"], options=opts)
    if all(r.n_failed == r.n_splits for r in results):
        raise RuntimeError("every split failed to converge")
    payload = {
        "config": plan,
        "ingestion": report.as_dict(),
        "estimates": {str(r.q): r.estimates for r in results},
        "failed_splits": {str(r.q): r.n_failed for r in results},
    }
    se = None
    if cfg["se"]:
        sp, eta_hat = make_split(corpus, cfg["seed"], 0, strict=False)
        triples, _ = build_subsets(corpus, sp)
        Y, E = subset_arrays(corpus, triples, eta_hat)
        se = {}
        for q in qs:
            fit = fit_ces(Y, E, q)
            if fit.converged:
                se[q] = ces_sandwich(Y, E, fit.estimate, q)
        payload["sandwich_se_split0"] = {str(q): v for q, v in se.items()}
    write_json(out / "results.json", "estimate", payload)
    write_split_csv(out / "splits.csv", [rec for r in results for rec in r.records])
    print(format_table({r.q: {k: r.estimates[k] for k in PARAM_NAMES + ("avg_output",)} for r in results}, se, "Estimates"))
    return payload


def cmd_counterfactual(args, cfg, out: Path) -> dict:
    corpus, _ = _load(args, cfg)
    qs = _q_list(cfg["q"])
    plan = {"corpus": str(args.corpus), "q": qs, "splits": cfg["splits"], "seed": cfg["seed"], "subsample": cfg["subsample"]}
    if args.dry_run:
        return {"plan": plan}
    opts = SplitOptions(subsample_size=cfg["subsample"], ortho_counterfactual=True)
    results = cross_fit(corpus, qs, cfg["splits"], cfg["seed"], workers=cfg["workers"], options=opts)
    rows = {
        r.q: {
            "observed_avg": r.estimates["avg_output"],
            "observed_model_avg": r.estimates["observed_model_avg"],
            "random_realloc": r.estimates["counterfactual"],
            "random_realloc_ortho": r.estimates["counterfactual_ortho"],
        }
        for r in results
    }
    empirical = float(np.mean([corpus.papers[j].output for j in corpus.duo_papers])) if corpus.duo_papers else float("nan")
    payload = {"config": plan, "empirical_duo_mean": empirical, "estimates": {str(q): v for q, v in rows.items()}}
    write_json(out / "counterfactual.json", "counterfactual", payload)
    print(f"empirical mean output of co-authored papers: {empirical:.4f}")
    print(format_table(rows, title="Average output"))
    return payload


def cmd_quasi_diff(args, cfg, out: Path) -> dict:
    corpus, _ = _load(args, cfg)
    plan = {"corpus": str(args.corpus), "splits": cfg["splits"], "seed": cfg["seed"]}
    if args.dry_run:
        return {"plan": plan}
    rows = []
    for s in range(cfg["splits"]):
        _, eta_hat = make_split(corpus, cfg["seed"], s, strict=False)
        res = quasi_diff_gamma(corpus, eta_hat)
        rows.append({"split_id": s, "gamma": res.gamma_hat, "boundary": res.boundary_flag, "residual_dim": res.residual_dim})
    interior = [r["gamma"] for r in rows if not r["boundary"]]
    payload = {
        "config": plan,
        "gamma_mean_interior": float(np.mean(interior)) if interior else float("nan"),
        "n_boundary": sum(r["boundary"] for r in rows),
        "splits": rows,
    }
    write_json(out / "quasi_diff.json", "quasi-diff", payload)
    print(f"gamma (mean over {len(interior)} interior splits): {payload['gamma_mean_interior']:.4f}; boundary-only splits: {payload['n_boundary']}")
    return payload


def cmd_bootstrap(args, cfg, out: Path) -> dict:
    corpus, _ = _load(args, cfg)
    plan = {"corpus": str(args.corpus), "q": cfg["q"], "B": cfg["B"], "inner_splits": cfg["inner_splits"], "seed": cfg["seed"]}
    if args.dry_run:
        return {"plan": plan}
    sp, eta_hat = make_split(corpus, cfg["seed"], 0, strict=False)
    triples, _ = build_subsets(corpus, sp)
    Y, E = subset_arrays(corpus, triples, eta_hat)
    fit = fit_ces(Y, E, cfg["q"])
    if not fit.converged:
        raise RuntimeError(f"fit for the bootstrap design did not converge: {fit.message}")
    theta = CesTheta.from_internal(fit.estimate)
    opts = SplitOptions(subsample_size=min(cfg["subsample"], 1000))
    res = parametric_bootstrap(
        corpus, theta, effects_for_simulation(corpus), cfg["B"], cfg["q"], cfg["inner_splits"], cfg["seed"], workers=cfg["workers"], options=opts
    )
    payload = {"config": plan, "theta_hat": theta.as_dict(), "n_success": res.n_success, "sufficient": res.sufficient, "se": res.se, "quantiles": res.quantiles}
    write_json(out / "bootstrap.json", "bootstrap", payload)
    print(format_table({cfg["q"]: theta.as_dict()}, {cfg["q"]: res.se}, f"Bootstrap ({res.n_success}/{cfg['B']} replications)"))
    if not res.sufficient:
        raise RuntimeError(f"only {res.n_success} of {cfg['B']} bootstrap replications succeeded")
    return payload


def cmd_check(args, cfg, out: Path) -> dict:
    plan = {"model": cfg["model"], "q": cfg["q"], "T": cfg["T"], "points": cfg["points"], "seed": cfg["seed"]}
    if args.dry_run:
        return {"plan": plan}
    rng = np.random.default_rng(cfg["seed"])
    q = cfg["q"]
    rows = []
    for _ in range(cfg["points"]):
        if cfg["model"] == "neyman-scott":
            model, moment = NeymanScottModel(cfg["T"]), ScoreMoment()
            theta, eta, mu = [float(rng.uniform(0.5, 2.0))], [[float(rng.normal())]], None
        else:
            model = CesSubsetModel()
            theta = CesTheta(rng.uniform(0.7, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5)).to_internal()
            eta = [rng.normal(size=2).tolist()]
            moment, mu = ScoreMoment(), None
        rep = orthogonality_check(model, moment, theta, eta, mu, q)
        rows.append({"theta": list(map(float, theta)), "eta": eta[0], "max_violation": rep.max_violation, "by_order": rep.by_order()})
    worst = max(r["max_violation"] for r in rows)
    payload = {"config": plan, "max_violation": worst, "points": rows}
    write_json(out / "orthogonality.json", "check-orthogonality", payload)
    print(f"{cfg['model']} q={q}: max violation {worst:.3e} over {len(rows)} points")
    return payload


STUDY_SECTIONS = {
    "study": {"n_reps": int, "q_list": str, "seed": int, "estimator": str, "workers": int},
    "topology": {f.name: f.type for f in fields(TopologyConfig)},
    "theta0": {k: float for k in PARAM_NAMES},
}


def read_study_config(path: Path) -> McStudyConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path):
        raise ConfigError(f"cannot read study config {path}")
    values: dict[str, dict] = {s: {} for s in STUDY_SECTIONS}
    for section in cp.sections():
        if section not in STUDY_SECTIONS:
            raise ConfigError(f"unknown section [{section}] in {path}")
        for key, raw in cp.items(section):
            if key not in STUDY_SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            kind = STUDY_SECTIONS[section][key]
            kind = {"int": int, "float": float, "str": str}.get(kind, kind) if isinstance(kind, str) else kind
            try:
                values[section][key] = kind(raw)
            except ValueError:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
    study = values["study"]
    if "q_list" in study:
        try:
            study["q_list"] = tuple(int(v) for v in study["q_list"].replace(",", " ").split())
        except ValueError:
            raise ConfigError("q_list must be integers separated by commas or spaces") from None
    theta = {"beta": 1.0, "gamma": 1.0, "sigma2_1": 1.0, "sigma2_2": 1.0, **values["theta0"]}
    try:
        cfg = McStudyConfig(topology=TopologyConfig(**values["topology"]), theta0=CesTheta(**theta), **study)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def cmd_mc_study(args, cfg, out: Path) -> dict:
    study = read_study_config(args.study)
    if cfg.get("seed") is not None and args.seed is not None:
        study.seed = args.seed
    if args.workers is not None:
        study.workers = args.workers
    plan = {"n_reps": study.n_reps, "q_list": list(study.q_list), "estimator": study.estimator, "topology": asdict(study.topology), "theta0": study.theta0.as_dict()}
    if args.dry_run:
        return {"plan": plan}
    report = run_study(study)
    paths = report.write(out)
    print(f"{'parameter':<10}{'estimator':>12}{'Median':>10}{'Mean':>10}{'q2.5':>10}{'q97.5':>10}{'failed':>8}")
    for r in report.rows:
        print(f"{r['parameter']:<10}{r['estimator']:>12}{r['Median']:>10.4f}{r['Mean']:>10.4f}{r['q2.5']:>10.4f}{r['q97.5']:>10.4f}{r['n_failed']:>8d}")
    return {"config": plan, "files": {k: str(v) for k, v in paths.items()}}


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "counterfactual": cmd_counterfactual,
    "quasi-diff": cmd_quasi_diff,
    "bootstrap": cmd_bootstrap,
    "check-orthogonality": cmd_check,
    "mc-study": cmd_mc_study,
}


def _error_record(out: Path, command: str, exc: BaseException, status: int) -> None:
    try:
        write_json(
            out / "error.json",
            command,
            {"status": status, "error_type": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()},
        )
    except OSError:
        pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = output_dir(args)
    try:
        cfg = resolve(args)
        if args.command == "mc-study" and not Path(args.study).is_file():
            raise ConfigError(f"study config not found: {args.study}")
        if not args.dry_run:
            out.mkdir(parents=True, exist_ok=True)
        payload = COMMANDS[args.command](args, cfg, out)
        if args.dry_run:
            print(json.dumps(_clean({"command": args.command, "dry_run": True, **payload}), indent=2, sort_keys=True))
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _error_record(out, args.command, exc, EXIT_CONFIG)
        return EXIT_CONFIG
    except Exception as exc:  # any estimation failure becomes a diagnostics record
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _error_record(out, args.command, exc, EXIT_RUNTIME)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
