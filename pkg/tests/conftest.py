import numpy as np
import pytest

from icl_lab.prior import Component, Hyper, MixturePrior


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path_factory, monkeypatch):
    # keep embedding tables out of the home directory
    monkeypatch.setenv("ICL_LAB_CACHE", str(tmp_path_factory.getbasetemp() / "embedding-cache"))


def random_prior(rng, d, M, hyper=None, scale=1.0):
    pis = rng.dirichlet(np.ones(M))
    pis = pis / pis.sum()
    comps = tuple(
        Component(float(p), scale * rng.standard_normal(d), scale * rng.standard_normal(d)) for p in pis
    )
    return MixturePrior(comps, hyper or Hyper(1.0, 1.0, 1.0, 1.0))


def random_hyper(rng):
    return Hyper(*np.exp(rng.uniform(-1.0, 1.0, size=4)))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
