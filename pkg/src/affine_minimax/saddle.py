"""Saddle value of the Hellinger reformulation.

For fixed ``alpha > 0`` the coupled objective

    h_alpha(x, y) = g.(x - y) + 2 alpha sum_l R_l ln AffH_l(A_l x, A_l y)

is concave on ``X x X`` and is maximized by Frank-Wolfe (with a second-order
polish when FW stalls).  The outer function
``Psi(alpha) = 2 alpha r + max h_alpha`` is convex in ``alpha`` and is
minimized by golden-section search on ``ln alpha``.  Its infimum is twice the
certified half-width.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .frankwolfe import MaxResult, interior_active_set, maximize_certified
from .model import ProblemSpec

logger = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class InnerSolution:
    x_star: np.ndarray
    y_star: np.ndarray
    value: float
    fw_gap: float
    iterations: int
    converged: bool = True
    method: str = "away-fw"
    stopped_early: bool = False
    # warm-start state, not part of the result proper
    active: list | None = field(default=None, repr=False, compare=False)

    @property
    def upper(self) -> float:
        return self.value + self.fw_gap


@dataclass
class SaddleSolution:
    alpha_star: float
    inner: InnerSolution
    psi_lower: float
    psi_upper: float
    r: float
    trace: list
    phi2_lower: float
    bound_active: bool = False
    precision_met: bool = True

    @property
    def delta_solver(self) -> float:
        """``psi_upper`` minus a certified lower bound on the saddle value ``2 Phi*``."""
        return self.psi_upper - self.phi2_lower

    @property
    def flags(self) -> list[str]:
        out = []
        if self.bound_active:
            out.append("alpha bound active")
        if not self.precision_met:
            out.append("precision not met")
        if not self.inner.converged:
            out.append("inner solver did not reach tolerance")
        return out


def _log_aff_sum(spec: ProblemSpec, x, y) -> float:
    total = 0.0
    for ch in spec.channels:
        total += ch.repetitions * math.log(ch.family.affinity(ch.apply(x), ch.apply(y)))
    return total


def coupled_objective(spec: ProblemSpec, alpha: float, x, y) -> float:
    """``g.(x - y) + 2 alpha sum_l R_l ln AffH_l(A_l x, A_l y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(spec.g @ (x - y)) + 2.0 * alpha * _log_aff_sum(spec, x, y)


def coupled_gradient(spec: ProblemSpec, alpha: float, x, y):
    gx = spec.g.astype(float).copy()
    gy = -spec.g.astype(float)
    for ch in spec.channels:
        dmu, dnu = ch.family.log_affinity_grad(ch.apply(x), ch.apply(y))
        scale = 2.0 * alpha * ch.repetitions
        gx += scale * (ch.map_matrix.T @ dmu)
        gy += scale * (ch.map_matrix.T @ dnu)
    return gx, gy


def maximize_inner(
    spec: ProblemSpec,
    alpha: float,
    tol: float | None = None,
    max_iter: int | None = None,
    warm_start: InnerSolution | None = None,
    stop_value: float | None = None,
) -> InnerSolution:
    """Certified ``max_{x,y} h_alpha``: returns the bracket ``[value, value + fw_gap]``.

    With ``stop_value`` the solve ends as soon as ``value >= stop_value``; the
    bracket stays valid but may be wider than ``tol``.
    """
    tol = spec.solver.tol_inner if tol is None else tol
    max_iter = spec.solver.max_iter_inner if max_iter is None else max_iter
    fs = spec.feasible_set

    def fun(z):
        return coupled_objective(spec, alpha, z[0], z[1])

    def grad(z):
        return list(coupled_gradient(spec, alpha, z[0], z[1]))

    if warm_start is not None and warm_start.active is not None:
        start = [a.copy() for a in warm_start.active]
    else:
        centre = interior_active_set(fs)
        start = [centre, centre.copy()]
    res: MaxResult = maximize_certified(fun, grad, [fs, fs], start, tol, max_iter, stop_value=stop_value)
    if not res.converged and not res.stopped_early:
        logger.info("inner solve stopped at gap %.3g > %.3g (alpha=%.4g)", res.gap, tol, alpha)
    return InnerSolution(
        x_star=res.points[0],
        y_star=res.points[1],
        value=res.value,
        fw_gap=res.gap,
        iterations=res.iterations,
        converged=res.converged,
        method=res.method,
        stopped_early=res.stopped_early,
        active=res.active,
    )


def psi(spec: ProblemSpec, alpha: float, warm_start: InnerSolution | None = None, cutoff: float | None = None):
    """Bracket ``(psi_lower, psi_upper, inner)`` for ``Psi(alpha) = 2 alpha r + max h_alpha``.

    If ``cutoff`` is given the inner solve may stop once ``psi_lower >= cutoff``.
    """
    base = 2.0 * alpha * spec.r
    stop = None if cutoff is None else cutoff - base
    inner = maximize_inner(spec, alpha, warm_start=warm_start, stop_value=stop)
    lo, hi = base + inner.value, base + inner.upper
    # max h_alpha >= h_alpha(x, x) = 0
    assert hi >= base - 1e-10 * (1.0 + abs(base)), f"Psi({alpha}) upper bound {hi} below 2*alpha*r = {base}"
    return lo, hi, inner


def _envelope_min(lines: list[tuple[float, float]]) -> float:
    """``min_{a >= 0} max_k (c_k + s_k a)`` for lines ``(c_k, s_k)``."""
    c = np.array([ln[0] for ln in lines])
    s = np.array([ln[1] for ln in lines])
    cand = [0.0]
    ds = s[:, None] - s[None, :]
    dc = c[None, :] - c[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = dc / ds
    a = a[np.isfinite(a) & (a > 0)]
    cand.extend(a.tolist())
    cand = np.asarray(cand)
    vals = np.max(c[:, None] + s[:, None] * cand[None, :], axis=0)
    best = float(vals.min())
    if np.all(s <= 0):
        best = min(best, -np.inf if np.any(s < 0) else float(c.max()))
    return best


def minimize_alpha(spec: ProblemSpec) -> SaddleSolution:
    """Golden-section search of ``Psi`` on ``ln alpha`` over ``[alpha_min, alpha_max]``."""
    cfg = spec.solver
    r = spec.r
    lo_b, hi_b = math.log(cfg.alpha_min), math.log(cfg.alpha_max)
    trace: list[tuple[float, float, float]] = []
    evals: dict[float, tuple[float, float, InnerSolution]] = {}
    # every evaluated pair (x, y) gives an affine minorant of Psi in alpha
    lines: list[tuple[float, float]] = [(0.0, 2.0 * r)]
    last: list[InnerSolution | None] = [None]
    best_upper = [math.inf]

    def alpha_of(t: float) -> float:
        return cfg.alpha_min if t == lo_b else cfg.alpha_max if t == hi_b else math.exp(t)

    def evaluate(t: float):
        if t in evals:
            return evals[t]
        alpha = alpha_of(t)
        # a lower bound above the incumbent's upper bound rules this alpha out
        cutoff = best_upper[0] if math.isfinite(best_upper[0]) else None
        lo, hi, inner = psi(spec, alpha, warm_start=last[0], cutoff=cutoff)
        if not inner.stopped_early:
            last[0] = inner
            best_upper[0] = min(best_upper[0], hi)
        evals[t] = (lo, hi, inner)
        trace.append((alpha, lo, hi))
        lines.append(
            (float(spec.g @ (inner.x_star - inner.y_star)), 2.0 * (r + _log_aff_sum(spec, inner.x_star, inner.y_star)))
        )
        return evals[t]

    def key(t: float) -> float:
        lo, hi, inner = evaluate(t)
        return lo if inner.stopped_early else hi

    a, b = lo_b, hi_b
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = key(c), key(d)
    while math.expm1(b - a) > cfg.tol_alpha:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = key(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = key(d)

    bound_active = False
    if a == lo_b:
        evaluate(lo_b)
        bound_active = True
    if b == hi_b:
        evaluate(hi_b)
        bound_active = True

    t_best = min((t for t in evals if not evals[t][2].stopped_early), key=lambda t: (key(t), t))
    lo, hi, inner = evals[t_best]
    if bound_active and t_best not in (lo_b, hi_b):
        # the minimizer sits strictly inside after all
        bound_active = False
    phi2_lower = max(0.0, _envelope_min(lines))
    sol = SaddleSolution(
        alpha_star=alpha_of(t_best),
        inner=inner,
        psi_lower=lo,
        psi_upper=hi,
        r=r,
        trace=trace,
        phi2_lower=phi2_lower,
        bound_active=bound_active,
    )
    sol.precision_met = sol.delta_solver <= spec.delta
    if bound_active:
        logger.warning("alpha bound active: Psi is minimized at alpha=%g", sol.alpha_star)
    if not sol.precision_met:
        logger.warning("precision not met: achieved delta %.3g > requested %.3g", sol.delta_solver, spec.delta)
    return sol
