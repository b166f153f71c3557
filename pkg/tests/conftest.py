import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hiortho.mc import TopologyConfig, generate_topology, simulate_corpus
from hiortho.models.ces import CesTheta
from hiortho.netdata import Paper, TeamCorpus

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def tiny_corpus():
    """Two authors with two sole papers each and one joint paper."""
    e = np.e
    papers = (
        Paper("p1", ("ann",), e, "1990"),
        Paper("p2", ("ann",), e, "1991"),
        Paper("p3", ("bob",), e ** 2, "1990"),
        Paper("p4", ("bob",), 1.0, "1992"),
        Paper("p5", ("ann", "bob"), 3.0, "1993"),
    )
    return TeamCorpus(papers)


@pytest.fixture(scope="session")
def small_topology():
    return generate_topology(TopologyConfig(n_authors=120, n_papers=800, duo_share=0.15, seed=11))


@pytest.fixture(scope="session")
def small_corpus(small_topology):
    top, eff = small_topology
    return simulate_corpus(top, CesTheta(1.0, 1.0, 1.0, 1.0), eff, seed=5)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from test_acceptance import VERDICTS

    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
