import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from affine_minimax import ChannelModel, Discrete, Polytope, ProblemSpec, parse_problem

settings.register_profile("default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=10, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"
SHIPPED = ["two_point", "discrete_mixing", "poisson", "gaussian", "product"]


def load(name: str, **changes) -> ProblemSpec:
    spec = parse_problem((PROBLEMS / f"{name}.json").read_text())
    return spec.with_(**changes) if changes else spec


def two_point(repetitions: int = 1, epsilon: float = 0.05, g=(1.0, 0.0), **solver) -> ProblemSpec:
    """Segment {(t, 1-t): t in [0.2, 0.8]} observed through one 2-outcome channel."""
    spec = ProblemSpec(
        feasible_set=Polytope(((0.2, 0.8), (0.8, 0.2))),
        g=np.asarray(g, dtype=float),
        channels=(ChannelModel(Discrete(2), np.eye(2), np.zeros(2), repetitions),),
        epsilon=epsilon,
        delta=0.01,
    )
    if solver:
        spec = spec.with_(solver=replace(spec.solver, **solver))
    return spec


def singleton(v=(0.3, 0.7), epsilon: float = 0.05) -> ProblemSpec:
    return ProblemSpec(
        feasible_set=Polytope((tuple(v),)),
        g=np.array([1.0, 0.0]),
        channels=(ChannelModel(Discrete(2), np.eye(2), np.zeros(2), 1),),
        epsilon=epsilon,
        delta=0.01,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
