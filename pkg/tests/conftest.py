"""Shared fixtures: small fitted surrogates and a cheap analytic problem."""

import numpy as np
import pytest

from rareprob import (
    BenchmarkProblem,
    BoxDomain,
    InputDistribution,
    RngStream,
    Uniform,
)
from rareprob import gp


@pytest.fixture(scope="session")
def surrogate_1d():
    """GP fit to y = x on the 11-point grid {0, 0.1, ..., 1}."""
    x = np.linspace(0.0, 1.0, 11)[:, None]
    y = x[:, 0].copy()
    domain = BoxDomain([0.0], [1.0])
    return gp.fit(x, y, domain, RngStream(7))


@pytest.fixture(scope="session")
def surrogate_2d():
    """GP fit to a smooth 2d ridge on a 5x5 grid over [0,1]^2."""
    g = np.linspace(0.0, 1.0, 5)
    xx, yy = np.meshgrid(g, g)
    x = np.column_stack([xx.ravel(), yy.ravel()])
    y = np.sin(3.0 * x[:, 0]) + x[:, 1] ** 2
    domain = BoxDomain([0.0, 0.0], [1.0, 1.0])
    return gp.fit(x, y, domain, RngStream(11))


def make_toy_problem(t: float = 1.8, alpha: float = 0.02) -> BenchmarkProblem:
    """Cheap 2d problem: f(x) = x1 + x2 on [0,1]^2 uniform.

    P(x1 + x2 > 1.8) = 0.02 exactly, large enough that small pools observe
    failures yet rare enough to exercise the same code paths as the
    benchmark problems.
    """
    domain = BoxDomain([0.0, 0.0], [1.0, 1.0])
    dist = InputDistribution((Uniform(0.0, 1.0), Uniform(0.0, 1.0)))
    return BenchmarkProblem(
        name="TOY",
        f=lambda x: np.atleast_2d(x).sum(axis=1),
        t=t,
        orientation="FAIL_ABOVE",
        domain=domain,
        dist=dist,
        table_alpha=alpha,
        table_M=20_000,
        table_N=30,
        table_n0=8,
    )


@pytest.fixture()
def toy_problem():
    return make_toy_problem()
