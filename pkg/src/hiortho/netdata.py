"""Team corpora: ingestion, estimation subsets and the random re-allocation counterfactual.

A corpus is a list of papers, each written by one or two authors and carrying
a positive output measure.  Estimation works on subsets of three papers: one
co-authored paper plus one held-out sole-authored paper of each co-author.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .models.ces import CesTheta, ces_log_aggregate
from .rng import stream

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("paper_id", "authors", "output", "period")


class CorpusFormatError(ValueError):
    """Malformed corpus file; ``problems`` lists ``(line, message)`` pairs."""

    def __init__(self, message, problems=()):
        self.problems = list(problems)
        super().__init__(message)


@dataclass(frozen=True)
class Paper:
    paper_id: str
    authors: tuple[str, ...]
    output: float
    period: str = ""

    @property
    def size(self) -> int:
        return len(self.authors)


@dataclass(frozen=True)
class TeamCorpus:
    """Immutable collection of papers with author indexes."""

    papers: tuple[Paper, ...]

    def __post_init__(self):
        ids = Counter(p.paper_id for p in self.papers)
        dup = [k for k, v in ids.items() if v > 1]
        if dup:
            raise ValueError(f"duplicate paper ids: {dup[:10]}")
        for p in self.papers:
            if p.size not in (1, 2):
                raise ValueError(f"paper {p.paper_id} has {p.size} authors; only 1 or 2 supported")
            if p.size == 2 and p.authors[0] == p.authors[1]:
                raise ValueError(f"paper {p.paper_id} lists the same author twice")
            if not p.output > 0:
                raise ValueError(f"paper {p.paper_id} has nonpositive output {p.output}")

    def __len__(self):
        return len(self.papers)

    @cached_property
    def authors(self) -> tuple[str, ...]:
        return tuple(sorted({a for p in self.papers for a in p.authors}))

    @cached_property
    def solo_papers(self) -> dict[str, tuple[int, ...]]:
        """Author -> indexes of their sole-authored papers, in corpus order."""
        out: dict[str, list[int]] = defaultdict(list)
        for k, p in enumerate(self.papers):
            if p.size == 1:
                out[p.authors[0]].append(k)
        return {a: tuple(v) for a, v in out.items()}

    @cached_property
    def duo_papers(self) -> tuple[int, ...]:
        return tuple(k for k, p in enumerate(self.papers) if p.size == 2)

    @cached_property
    def network(self) -> dict[str, tuple[int, ...]]:
        """Author -> indexes of every paper they wrote."""
        out: dict[str, list[int]] = defaultdict(list)
        for k, p in enumerate(self.papers):
            for a in p.authors:
                out[a].append(k)
        return {a: tuple(v) for a, v in out.items()}

    def eligible(self, author: str) -> bool:
        return len(self.solo_papers.get(author, ())) >= 2

    @cached_property
    def eligible_authors(self) -> tuple[str, ...]:
        return tuple(a for a in self.authors if self.eligible(a))

    @cached_property
    def log_output(self) -> np.ndarray:
        return np.log(np.array([p.output for p in self.papers]))

    def with_outputs(self, outputs) -> "TeamCorpus":
        outputs = np.asarray(outputs, dtype=float)
        return TeamCorpus(
            tuple(Paper(p.paper_id, p.authors, float(o), p.period) for p, o in zip(self.papers, outputs))
        )

    def summary(self) -> dict:
        n_solo = [len(self.solo_papers.get(a, ())) for a in self.authors]
        pubs = [len(self.network[a]) for a in self.authors]
        return {
            "papers": len(self.papers),
            "authors": len(self.authors),
            "duos": len(self.duo_papers),
            "duo_share": len(self.duo_papers) / max(len(self.papers), 1),
            "eligible_authors": len(self.eligible_authors),
            "pubs_q10_q50_q90": [float(v) for v in np.quantile(pubs, [0.1, 0.5, 0.9])] if pubs else [],
            "solo_min": int(min(n_solo)) if n_solo else 0,
        }


@dataclass
class IngestionReport:
    rows_read: int = 0
    accepted: int = 0
    rejected_size: int = 0
    rejected_output: int = 0
    malformed: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "accepted": self.accepted,
            "rejected_size": self.rejected_size,
            "rejected_output": self.rejected_output,
            "malformed": [{"line": ln, "problem": msg} for ln, msg in self.malformed],
        }


def _net_time_effects(papers: list[Paper]) -> list[Paper]:
    """Divide outputs by the geometric mean output of their period."""
    logs = defaultdict(list)
    for p in papers:
        logs[p.period].append(np.log(p.output))
    centre = {k: float(np.mean(v)) for k, v in logs.items()}
    return [Paper(p.paper_id, p.authors, float(np.exp(np.log(p.output) - centre[p.period])), p.period) for p in papers]


def load_corpus(path, delimiter: str = ",", net_time_effects: bool = False, strict: bool = False):
    """Read a delimited corpus file.

    The header must contain ``paper_id, authors, output, period``; the
    ``authors`` field joins author ids with semicolons.  Papers with more than
    two authors or nonpositive output are dropped and counted.  Malformed rows
    are listed with their line numbers; with ``strict=True`` they abort the
    load.

    Returns
    -------
    corpus : TeamCorpus
    report : IngestionReport
    """
    report = IngestionReport()
    papers: list[Paper] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise CorpusFormatError(f"{path}: empty file, header required")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise CorpusFormatError(f"{path}: header lacks columns {missing}")
        for row in reader:
            line = reader.line_num
            report.rows_read += 1
            try:
                pid = (row["paper_id"] or "").strip()
                authors = tuple(a.strip() for a in (row["authors"] or "").split(";") if a.strip())
                output = float(row["output"])
                period = (row["period"] or "").strip()
            except (TypeError, ValueError) as exc:
                report.malformed.append((line, f"unparseable row: {exc}"))
                continue
            if not pid or not authors:
                report.malformed.append((line, "missing paper_id or authors"))
                continue
            if len(authors) > 2:
                report.rejected_size += 1
                continue
            if len(authors) == 2 and authors[0] == authors[1]:
                report.malformed.append((line, "same author listed twice"))
                continue
            if not np.isfinite(output) or output <= 0:
                report.rejected_output += 1
                continue
            papers.append(Paper(pid, authors, output, period))
    if strict and report.malformed:
        raise CorpusFormatError(f"{path}: {len(report.malformed)} malformed rows", report.malformed)
    if not papers:
        raise CorpusFormatError(f"{path}: no valid papers", report.malformed)
    seen = set()
    dups = [p.paper_id for p in papers if p.paper_id in seen or seen.add(p.paper_id)]
    if dups:
        raise CorpusFormatError(f"{path}: duplicate paper ids {dups[:10]}")
    if net_time_effects:
        papers = _net_time_effects(papers)
    report.accepted = len(papers)
    return TeamCorpus(tuple(papers)), report


def write_corpus(corpus: TeamCorpus, path, delimiter: str = ",") -> None:
    """Write a corpus in the format read by :func:`load_corpus`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(REQUIRED_COLUMNS)
        for p in corpus.papers:
            w.writerow([p.paper_id, ";".join(p.authors), repr(float(p.output)), p.period])


def write_report(report: IngestionReport, path) -> None:
    Path(path).write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Subsets


@dataclass(frozen=True)
class SubsetTriple:
    """One co-authored paper and the held-out sole papers of its two authors."""

    duo: int
    solo1: int
    solo2: int
    author1: str
    author2: str

    def __post_init__(self):
        if len({self.duo, self.solo1, self.solo2}) != 3:
            raise ValueError("subset papers must be distinct")


@dataclass
class SubsetDiagnostics:
    n_duos: int = 0
    built: int = 0
    skipped_ineligible: int = 0
    reused_solos: int = 0


def build_subsets(corpus: TeamCorpus, plan) -> tuple[list[SubsetTriple], SubsetDiagnostics]:
    """One triple per co-authored paper whose authors both hold a held-out sole paper.

    ``plan.holdout`` maps authors to the index of their held-out paper.  An
    author in several co-authored papers contributes the same held-out paper
    to each of them.
    """
    diag = SubsetDiagnostics(n_duos=len(corpus.duo_papers))
    triples = []
    uses = Counter()
    for j in corpus.duo_papers:
        a1, a2 = corpus.papers[j].authors
        h1, h2 = plan.holdout.get(a1), plan.holdout.get(a2)
        if h1 is None or h2 is None:
            diag.skipped_ineligible += 1
            continue
        triples.append(SubsetTriple(j, h1, h2, a1, a2))
        uses[a1] += 1
        uses[a2] += 1
    diag.built = len(triples)
    diag.reused_solos = sum(v - 1 for v in uses.values() if v > 1)
    if not triples:
        log.warning("no estimation subsets: corpus has no co-authored paper with two eligible authors")
    return triples, diag


def subset_arrays(corpus: TeamCorpus, triples, eta_hat: dict[str, float]):
    """Log outcomes (n, 3) and preliminary log effects (n, 2) of the triples."""
    lo = corpus.log_output
    Y = np.array([[lo[t.duo], lo[t.solo1], lo[t.solo2]] for t in triples], dtype=float).reshape(-1, 3)
    E = np.array([[eta_hat[t.author1], eta_hat[t.author2]] for t in triples], dtype=float).reshape(-1, 2)
    return Y, E


# --------------------------------------------------------------------------
# Counterfactual


def _theta_vec(theta) -> np.ndarray:
    if isinstance(theta, CesTheta):
        return theta.to_internal()
    return np.asarray(theta, dtype=float)


def pair_output(theta, a1, a2) -> np.ndarray:
    """``beta * CES(e^a1, e^a2) * exp(sigma2(2)/2)`` elementwise."""
    t = _theta_vec(theta)
    a = np.column_stack([np.ravel(a1), np.ravel(a2)])
    return np.exp(t[0] + ces_log_aggregate(a, t[1]) + 0.5 * np.exp(t[3]))


def random_reallocation(theta, effects, subsample_size: int | None = None, seed: int = 0, chunk: int = 200_000) -> float:
    """Average expected output over all unordered pairs of a random author subsample.

    Parameters
    ----------
    theta : CesTheta or internal parameter vector
    effects : array_like
        Author log effects.
    subsample_size : int, optional
        Defaults to all authors, in which case the seed is irrelevant.
    """
    a = np.asarray(effects, dtype=float).ravel()
    n = a.size
    if n < 2:
        raise ValueError("need at least two authors")
    size = n if subsample_size is None else int(subsample_size)
    if not 2 <= size <= n:
        raise ValueError(f"subsample size {size} outside 2..{n}")
    if size < n:
        a = a[np.sort(stream(seed, 0).choice(n, size=size, replace=False))]
    else:
        a = np.sort(a)
    i, j = np.triu_indices(size, k=1)
    total = 0.0
    for s in range(0, i.size, chunk):
        total += float(np.sum(pair_output(theta, a[i[s : s + chunk]], a[j[s : s + chunk]])))
    return total / i.size


def observed_allocation_average(theta, corpus: TeamCorpus, effects: dict[str, float], duos=None) -> float:
    """Model-implied mean output over observed co-authored papers at the given effects."""
    duos = corpus.duo_papers if duos is None else duos
    pairs = [corpus.papers[j].authors for j in duos if all(a in effects for a in corpus.papers[j].authors)]
    if not pairs:
        raise ValueError("no co-authored paper with known effects")
    a1 = np.array([effects[p[0]] for p in pairs])
    a2 = np.array([effects[p[1]] for p in pairs])
    return float(np.mean(pair_output(theta, a1, a2)))


def duo_authors(corpus: TeamCorpus, effects: dict[str, float]) -> list[str]:
    """Authors of co-authored papers that have an effect estimate, sorted."""
    return sorted({a for j in corpus.duo_papers for a in corpus.papers[j].authors if a in effects})

