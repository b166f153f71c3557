import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiortho.estimate import IneligibleAuthorError, SplitPlan, make_split
from hiortho.models.ces import CesTheta
from hiortho.netdata import (
    CorpusFormatError,
    Paper,
    SubsetTriple,
    TeamCorpus,
    build_subsets,
    duo_authors,
    load_corpus,
    observed_allocation_average,
    random_reallocation,
    subset_arrays,
    write_corpus,
)
from oracles import pair_loop

HEADER = "paper_id,authors,output,period\n"


def write(tmp_path, body, name="corpus.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body, encoding="utf-8")
    return path


def test_three_row_file_gives_one_subset(tmp_path):
    path = write(tmp_path, "d1,ann;bob,2.5,1990\ns1,ann,1.5,1990\ns2,bob,0.5,1991\n")
    corpus, report = load_corpus(path)
    assert report.accepted == 3
    assert len(corpus.duo_papers) == 1
    plan = SplitPlan(0, 0, {"ann": 1, "bob": 2}, {"ann": (), "bob": ()})
    triples, diag = build_subsets(corpus, plan)
    assert triples == [SubsetTriple(0, 1, 2, "ann", "bob")]
    assert diag.built == 1
    # leave-one-out needs a second sole paper for the preliminary effect
    with pytest.raises(IneligibleAuthorError):
        make_split(corpus, seed=0)


def test_zero_output_rejected_and_counted(tmp_path):
    path = write(tmp_path, "s1,ann,0,1990\ns2,ann,1.0,1990\ns3,bob,-2,1990\n")
    corpus, report = load_corpus(path)
    assert report.rejected_output == 2
    assert report.accepted == 1
    assert len(corpus) == 1


def test_large_teams_rejected(tmp_path):
    path = write(tmp_path, "t1,a;b;c,1.0,1990\ns1,a,1.0,1990\n")
    _, report = load_corpus(path)
    assert report.rejected_size == 1


def test_malformed_rows_listed_with_lines(tmp_path):
    path = write(tmp_path, "s1,ann,abc,1990\ns2,ann,1.0,1990\n,bob,1.0,1990\n")
    _, report = load_corpus(path)
    assert [line for line, _ in report.malformed] == [2, 4]
    with pytest.raises(CorpusFormatError) as info:
        load_corpus(path, strict=True)
    assert len(info.value.problems) == 2


@pytest.mark.parametrize(
    "body, match",
    [("", "no valid papers"), ("s1,ann,0,1990\n", "no valid papers"), ("s1,a,1,1\ns1,b,1,1\n", "duplicate")],
)
def test_corpus_errors(tmp_path, body, match):
    with pytest.raises(CorpusFormatError, match=match):
        load_corpus(write(tmp_path, body))


def test_missing_header_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("paper_id,authors\nx,y\n")
    with pytest.raises(CorpusFormatError, match="output"):
        load_corpus(path)


def test_round_trip_identity(tmp_path, small_corpus):
    path = tmp_path / "out.tsv"
    write_corpus(small_corpus, path, delimiter="\t")
    back, report = load_corpus(path, delimiter="\t", strict=True)
    assert back == small_corpus
    assert report.accepted == len(small_corpus)


def test_net_time_effects_centres_each_period(tmp_path):
    path = write(tmp_path, "a,x,2,1990\nb,y,8,1990\nc,x,3,1991\n")
    corpus, _ = load_corpus(path, net_time_effects=True)
    lo = corpus.log_output
    assert lo[0] + lo[1] == pytest.approx(0.0, abs=1e-14)
    assert lo[2] == pytest.approx(0.0, abs=1e-14)


def test_corpus_validation():
    with pytest.raises(ValueError, match="duplicate"):
        TeamCorpus((Paper("p", ("a",), 1.0, ""), Paper("p", ("b",), 1.0, "")))
    with pytest.raises(ValueError, match="twice"):
        TeamCorpus((Paper("p", ("a", "a"), 1.0, ""),))
    with pytest.raises(ValueError, match="nonpositive"):
        TeamCorpus((Paper("p", ("a",), 0.0, ""),))


def test_eligibility_and_summary(tiny_corpus):
    assert tiny_corpus.eligible_authors == ("ann", "bob")
    s = tiny_corpus.summary()
    assert (s["papers"], s["authors"], s["duos"]) == (5, 2, 1)


def test_reused_holdout_across_duos():
    papers = [Paper(f"s{a}{k}", (a,), 1.0 + k, "") for a in "abc" for k in range(2)]
    papers += [Paper("d1", ("a", "b"), 1.0, ""), Paper("d2", ("a", "c"), 1.0, "")]
    corpus = TeamCorpus(tuple(papers))
    plan, _ = make_split(corpus, seed=3)
    triples, diag = build_subsets(corpus, plan)
    assert len(triples) == 2
    assert triples[0].solo1 == triples[1].solo1 == plan.holdout["a"]
    assert diag.reused_solos == 1


def test_subsets_disjoint_from_preliminary(small_corpus):
    plan, eta_hat = make_split(small_corpus, seed=1, strict=False)
    triples, _ = build_subsets(small_corpus, plan)
    prelim = {j for a in plan.preliminary for j in plan.preliminary[a]}
    used = {j for t in triples for j in (t.solo1, t.solo2)}
    assert used.isdisjoint(prelim)
    assert used <= set(plan.holdout.values())
    Y, E = subset_arrays(small_corpus, triples, eta_hat)
    assert Y.shape == (len(triples), 3) and E.shape == (len(triples), 2)


def test_no_duos_warns(caplog):
    corpus = TeamCorpus((Paper("a", ("x",), 1.0, ""), Paper("b", ("x",), 2.0, "")))
    plan, _ = make_split(corpus, seed=0)
    with caplog.at_level(logging.WARNING):
        triples, diag = build_subsets(corpus, plan)
    assert triples == [] and diag.n_duos == 0
    assert "no estimation subsets" in caplog.text


def test_ineligible_duo_authors_skipped(tiny_corpus):
    corpus = TeamCorpus(tiny_corpus.papers + (Paper("p6", ("ann", "cat"), 1.0, ""),))
    plan, _ = make_split(corpus, seed=0, strict=False)
    triples, diag = build_subsets(corpus, plan)
    assert len(triples) == 1 and diag.skipped_ineligible == 1
    assert plan.ineligible == ("cat",)


# -- counterfactual -----------------------------------------------------------


def test_five_author_pair_loop():
    theta = CesTheta(1.3, 0.4, 1.0, 0.7)
    effects = np.log([0.5, 1.2, 2.0, 0.8, 3.1])
    got = random_reallocation(theta, effects)
    assert got == pytest.approx(pair_loop(1.3, 0.4, 0.7, effects), rel=1e-12, abs=1e-12)


def test_equal_effects_collapse():
    theta = CesTheta(2.0, -0.5, 1.0, 0.3)
    got = random_reallocation(theta, np.full(6, np.log(1.7)))
    assert got == pytest.approx(2.0 * 1.7 * np.exp(0.15), rel=1e-13)


def test_linear_aggregator_gives_sample_mean(rng):
    theta = CesTheta(1.5, 1.0, 1.0, 0.4)
    a = rng.normal(size=9)
    expected = 1.5 * np.mean(np.exp(a)) * np.exp(0.2)
    assert random_reallocation(theta, a) == pytest.approx(expected, rel=1e-12)


def test_subsample_validation_and_seeding(rng):
    theta = CesTheta(1.0, 0.5, 1.0, 1.0)
    a = rng.normal(size=30)
    with pytest.raises(ValueError):
        random_reallocation(theta, a[:1])
    with pytest.raises(ValueError):
        random_reallocation(theta, a, subsample_size=31)
    assert random_reallocation(theta, a, 10, seed=4) == random_reallocation(theta, a, 10, seed=4)
    assert random_reallocation(theta, a, 10, seed=4) != random_reallocation(theta, a, 10, seed=5)


@given(st.permutations(list(range(7))), st.integers(0, 1000))
def test_full_sample_invariant_to_order_and_seed(perm, seed):
    theta = CesTheta(1.1, -0.8, 1.0, 0.5)
    a = np.log(np.arange(1.0, 8.0))
    base = random_reallocation(theta, a)
    assert random_reallocation(theta, a[list(perm)], seed=seed) == pytest.approx(base, rel=1e-14)


def test_observed_allocation_average(tiny_corpus):
    theta = CesTheta(1.0, 1.0, 1.0, 0.5)
    effects = {"ann": 0.0, "bob": np.log(3.0)}
    assert observed_allocation_average(theta, tiny_corpus, effects) == pytest.approx(2.0 * np.exp(0.25))
    assert duo_authors(tiny_corpus, effects) == ["ann", "bob"]
    with pytest.raises(ValueError):
        observed_allocation_average(theta, tiny_corpus, {"ann": 0.0})
