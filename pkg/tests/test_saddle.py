import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affine_minimax.densities import PoissonVec
from affine_minimax.geometry import Box, random_point
from affine_minimax.model import ChannelModel, ProblemSpec
from affine_minimax.saddle import (
    _envelope_min,
    coupled_gradient,
    coupled_objective,
    maximize_inner,
    minimize_alpha,
    psi,
)
from affine_minimax.validate import dual_value_oracle

from conftest import load, singleton, two_point

LN40 = math.log(40.0)


def segment_grid(n=2001):
    t = np.linspace(0.2, 0.8, n)
    return t[:, None], t[None, :]


def two_point_inner_grid(alpha, n=2001):
    """``max h_alpha`` over a t-grid of the segment, written out by hand."""
    tx, ty = segment_grid(n)
    aff = np.sqrt(tx * ty) + np.sqrt((1 - tx) * (1 - ty))
    return float(np.max(tx - ty + 2 * alpha * np.log(aff)))


def two_point_dual_grid(repetitions, eps=0.05, n=2001):
    tx, ty = segment_grid(n)
    aff = np.sqrt(tx * ty) + np.sqrt((1 - tx) * (1 - ty))
    ok = repetitions * np.log(aff) >= math.log(eps / 2)
    return float(np.max(np.where(ok, tx - ty, -np.inf)))


def poisson_box(dim=2):
    return ProblemSpec(
        Box((0.0,) * dim, (1.0,) * dim),
        np.arange(1, dim + 1, dtype=float),
        (ChannelModel(PoissonVec(dim), 3 * np.eye(dim), np.ones(dim), 2),),
        0.05,
        0.01,
    )


# coupled objective

def test_coupled_objective_examples():
    x, y = [0.8, 0.2], [0.2, 0.8]
    assert coupled_objective(two_point(), 1.0, x, y) == pytest.approx(0.6 + 2 * math.log(0.8), rel=1e-13)
    assert coupled_objective(two_point(2), 1.0, x, y) == pytest.approx(0.6 + 4 * math.log(0.8), rel=1e-13)
    assert coupled_objective(two_point(), 1.0, x, y) == pytest.approx(0.15371, abs=1e-5)
    assert coupled_objective(two_point(2), 1.0, x, y) == pytest.approx(-0.29257, abs=1e-5)


@given(st.floats(0.2, 0.8), st.floats(1e-6, 1e3))
def test_coupled_objective_vanishes_on_diagonal(t, alpha):
    assert coupled_objective(two_point(), alpha, [t, 1 - t], [t, 1 - t]) == pytest.approx(0.0, abs=1e-12)


def test_gradient_on_diagonal_poisson():
    spec = poisson_box()
    x = np.array([0.3, 0.6])
    gx, gy = coupled_gradient(spec, 2.0, x, x)
    np.testing.assert_allclose(gx, spec.g, atol=1e-14)
    np.testing.assert_allclose(gy, -spec.g, atol=1e-14)


def test_gradient_small_alpha():
    gx, gy = coupled_gradient(two_point(), 1e-12, [0.8, 0.2], [0.2, 0.8])
    np.testing.assert_allclose(gx, [1, 0], atol=1e-10)
    np.testing.assert_allclose(gy, [-1, 0], atol=1e-10)


@pytest.mark.parametrize("name", ["discrete_mixing", "poisson", "gaussian", "product"])
def test_gradient_finite_differences(name):
    spec = load(name)
    rng = np.random.default_rng(7)
    h = 1e-6
    for _ in range(50):
        x, y = random_point(spec.feasible_set, rng), random_point(spec.feasible_set, rng)
        alpha = float(np.exp(rng.uniform(-3, 2)))
        gx, gy = coupled_gradient(spec, alpha, x, y)
        for grad, which in ((gx, 0), (gy, 1)):
            fd = np.empty_like(x)
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = h
                args_p = (x + e, y) if which == 0 else (x, y + e)
                args_m = (x - e, y) if which == 0 else (x, y - e)
                fd[i] = (coupled_objective(spec, alpha, *args_p) - coupled_objective(spec, alpha, *args_m)) / (2 * h)
            assert np.linalg.norm(grad - fd) / max(1.0, np.linalg.norm(grad)) <= 1e-5


# inner maximization

def test_inner_singleton():
    sol = maximize_inner(singleton(), 0.7)
    np.testing.assert_array_equal(sol.x_star, [0.3, 0.7])
    np.testing.assert_array_equal(sol.y_star, [0.3, 0.7])
    assert sol.value == 0.0 and sol.fw_gap == 0.0


def test_inner_matches_grid():
    sol = maximize_inner(two_point(), 0.05)
    ref = two_point_inner_grid(0.05)
    assert abs(sol.value - ref) <= 1e-3
    # certified bracket contains the grid value (grid is a lower bound)
    assert sol.upper >= ref - 1e-12
    assert sol.fw_gap <= two_point().solver.tol_inner


def test_inner_large_alpha_collapses():
    sol = maximize_inner(two_point(), 1e3)
    assert abs(sol.value) <= 1e-3
    assert np.linalg.norm(sol.x_star - sol.y_star) <= 1e-2


def test_inner_early_stop_keeps_bracket_valid():
    spec = two_point(100)
    full = maximize_inner(spec, 0.5)
    early = maximize_inner(spec, 0.5, stop_value=full.value / 2)
    assert early.stopped_early
    assert early.value >= full.value / 2
    assert early.value <= full.upper + 1e-12
    assert early.upper >= full.value - 1e-12


# outer function

@given(st.floats(1e-6, 1e4))
@settings(max_examples=20)
def test_psi_singleton_exact(alpha):
    lo, hi, _ = psi(singleton(), alpha)
    assert lo == hi == 2 * alpha * LN40


def test_psi_small_alpha_is_diameter():
    lo, hi, _ = psi(two_point(), 1e-6)
    assert abs(hi - 0.6) <= 1e-3 and lo <= hi


@pytest.mark.parametrize("name", ["two_point", "discrete_mixing", "poisson", "gaussian", "product"])
def test_psi_three_point_convexity(name):
    spec = two_point(100) if name == "two_point" else load(name)
    rng = np.random.default_rng(3)
    for _ in range(20):
        a1, a2, a3 = np.sort(np.exp(rng.uniform(math.log(1e-3), math.log(1e2), 3)))
        (l1, h1, _), (l2, h2, _), (l3, h3, _) = (psi(spec, a) for a in (a1, a2, a3))
        w = (a3 - a2) / (a3 - a1)
        slack = (h1 - l1) + (h2 - l2) + (h3 - l3)
        assert l2 <= w * h1 + (1 - w) * h3 + 2 * slack + 1e-12


def test_envelope_min():
    # max(2a, 1 - a) is smallest at a = 1/3
    assert _envelope_min([(0.0, 2.0), (1.0, -1.0)]) == pytest.approx(2 / 3)
    assert _envelope_min([(0.5, 1.0)]) == pytest.approx(0.5)
    assert _envelope_min([(0.0, 2.0), (1.0, -1.0), (0.5, 0.0)]) == pytest.approx(2 / 3)


# alpha search

def test_singleton_clamps_to_alpha_min():
    sol = minimize_alpha(singleton())
    assert sol.alpha_star == 1e-8
    assert sol.psi_upper == pytest.approx(2e-8 * LN40, rel=1e-12)
    assert "alpha bound active" in sol.flags


def test_two_point_saddle_value():
    sol = minimize_alpha(two_point())
    assert abs(sol.psi_upper - 0.6) <= 1e-3
    assert sol.phi2_lower <= sol.psi_upper
    assert sol.precision_met


@pytest.mark.parametrize("reps", [10, 100])
def test_two_point_matches_dual_grid(reps):
    sol = minimize_alpha(two_point(reps))
    ref = two_point_dual_grid(reps)
    assert abs(sol.psi_upper - ref) <= 1e-3
    if reps == 100:
        assert sol.psi_upper < 0.6 - 1e-2


def test_two_point_dual_oracles_agree():
    # the hand-written segment grid and the generic oracle solve the same problem
    for reps in (1, 100):
        assert dual_value_oracle(two_point(reps), LN40, 2001) == pytest.approx(two_point_dual_grid(reps), abs=1e-12)


def test_bracket_contains_dual_oracle_discrete_mixing():
    spec = load("discrete_mixing", epsilon=0.1)
    sol = minimize_alpha(spec)
    ref = dual_value_oracle(spec, spec.r, 101)
    # grid value is a lower bound on the continuum optimum; 101 points leave ~1e-2 resolution
    assert ref <= sol.psi_upper + 1e-9
    assert sol.psi_upper - ref <= 2e-2


def test_monotone_in_epsilon():
    lo_eps = minimize_alpha(two_point(100, epsilon=0.01))
    hi_eps = minimize_alpha(two_point(100, epsilon=0.1))
    slack = lo_eps.delta_solver + hi_eps.delta_solver
    assert lo_eps.psi_upper >= hi_eps.psi_upper - slack


@pytest.mark.parametrize("name", ["two_point", "poisson"])
def test_monotone_in_repetitions(name):
    vals = []
    for reps in (1, 10, 100):
        spec = two_point(reps) if name == "two_point" else load(name)
        if name != "two_point":
            spec = spec.with_(channels=tuple(ChannelModel(c.family, c.map_matrix, c.map_offset, reps) for c in spec.channels))
        vals.append(minimize_alpha(spec))
    for a, b in zip(vals, vals[1:]):
        assert b.psi_upper <= a.psi_upper + a.delta_solver + b.delta_solver


@pytest.mark.parametrize("name", ["two_point", "gaussian"])
def test_sign_flip_symmetry(name):
    spec = two_point(100) if name == "two_point" else load(name)
    a = minimize_alpha(spec)
    b = minimize_alpha(spec.with_(g=-spec.g))
    slack = a.delta_solver + b.delta_solver
    assert abs(a.psi_upper - b.psi_upper) <= 2 * slack + 1e-12


@pytest.mark.parametrize("name", ["discrete_mixing", "poisson", "gaussian", "product"])
def test_shipped_reach_precision(name):
    sol = minimize_alpha(load(name))
    assert sol.precision_met
    assert 0 <= sol.delta_solver <= 0.01
    # every trace entry respects the lower bound 2 alpha r
    for alpha, lo, hi in sol.trace:
        assert hi >= 2 * alpha * sol.r - 1e-12 and lo <= hi
