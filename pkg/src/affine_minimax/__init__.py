"""Nearly minimax affine estimation of linear functionals via Hellinger affinities."""

__version__ = "0.1.0"

from .densities import Discrete, GaussianVec, PoissonVec  # noqa: E402
from .geometry import Box, Polytope, Simplex  # noqa: E402
from .model import ChannelModel, ProblemSpec, SolverConfig, parse_problem, validate_problem  # noqa: E402
from .saddle import minimize_alpha  # noqa: E402
from .estimator import AffineEstimator, build, evaluate, report, solve  # noqa: E402

__all__ = [
    "AffineEstimator",
    "Box",
    "ChannelModel",
    "Discrete",
    "GaussianVec",
    "PoissonVec",
    "Polytope",
    "ProblemSpec",
    "Simplex",
    "SolverConfig",
    "build",
    "evaluate",
    "minimize_alpha",
    "parse_problem",
    "report",
    "solve",
    "validate_problem",
]
