"""Certified concave maximization over products of feasible sets.

``maximize`` runs away-step Frank-Wolfe with an adaptive (backtracking)
quadratic step rule.  The returned Frank-Wolfe gap ``max_s grad.(s - z)``
certifies ``value + gap >= max f`` for concave ``f``.

Frank-Wolfe converges slowly when the maximizer is interior and the problem
is ill-conditioned.  ``maximize_certified`` then polishes the iterate with a
second-order method and re-certifies the polished point with its own FW gap.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .densities import DomainError
from scipy.optimize import Bounds, LinearConstraint, minimize

from .geometry import Box, FeasibleSet, Polytope, Simplex, extreme_points, lmo, min_norm_point, project

logger = logging.getLogger(__name__)

DROP_WEIGHT = 1e-14
L_MAX = 1e40


class LineSearchError(RuntimeError):
    """Backtracking failed: the objective is not concave/smooth along the step."""


@dataclass
class ActiveSet:
    """A point stored as convex weights over extreme points."""

    vertices: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    @classmethod
    def at_vertex(cls, v) -> "ActiveSet":
        return cls([np.asarray(v, dtype=float)], [1.0])

    def copy(self) -> "ActiveSet":
        return ActiveSet([v.copy() for v in self.vertices], list(self.weights))

    def point(self) -> np.ndarray:
        return np.asarray(self.weights) @ np.asarray(self.vertices)

    def index(self, v: np.ndarray) -> int:
        for i, u in enumerate(self.vertices):
            if np.array_equal(u, v):
                return i
        return -1

    def fw_update(self, s: np.ndarray, gamma: float) -> None:
        if gamma >= 1.0:
            self.vertices, self.weights = [s.copy()], [1.0]
            return
        w = [(1 - gamma) * wi for wi in self.weights]
        i = self.index(s)
        if i < 0:
            self.vertices.append(s.copy())
            w.append(gamma)
        else:
            w[i] += gamma
        self.weights = w
        self._prune()

    def away_update(self, i: int, gamma: float) -> None:
        w = [(1 + gamma) * wi for wi in self.weights]
        w[i] -= gamma
        self.weights = w
        self._prune()

    def _prune(self) -> None:
        keep = [k for k, wi in enumerate(self.weights) if wi > DROP_WEIGHT]
        self.vertices = [self.vertices[k] for k in keep]
        tot = sum(self.weights[k] for k in keep)
        self.weights = [self.weights[k] / tot for k in keep]


def interior_active_set(fs: FeasibleSet) -> ActiveSet:
    """Centroid-like interior point expressed over vertices."""
    if isinstance(fs, Box):
        # box centre as the midpoint of two opposite corners
        return ActiveSet([np.asarray(fs.lower, float), np.asarray(fs.upper, float)], [0.5, 0.5])
    V = extreme_points(fs)
    return ActiveSet(list(V), [1.0 / len(V)] * len(V))


@dataclass
class MaxResult:
    points: list
    active: list
    value: float
    gap: float
    iterations: int
    converged: bool
    method: str = "away-fw"
    stopped_early: bool = False

    @property
    def upper(self) -> float:
        return self.value + self.gap


def _safe(fun, pts) -> float:
    try:
        v = fun(pts)
    except DomainError:
        return -np.inf
    return v if np.isfinite(v) else -np.inf


def fw_gap(grads, points, sets) -> tuple[float, list]:
    s = [lmo(fs, gb) for fs, gb in zip(sets, grads)]
    gap = sum(float(gb @ (sb - zb)) for gb, sb, zb in zip(grads, s, points))
    return max(gap, 0.0), s


def maximize(
    fun: Callable[[list], float],
    grad: Callable[[list], list],
    sets: Sequence[FeasibleSet],
    start: Sequence[ActiveSet],
    tol: float,
    max_iter: int,
    stop_value: float | None = None,
) -> MaxResult:
    """Away-step Frank-Wolfe ascent of a concave ``fun`` over ``prod(sets)``.

    ``fun``/``grad`` take a list of block vectors.  Stops once the FW gap is
    at most ``tol``, after ``max_iter`` iterations, or as soon as the value
    reaches ``stop_value`` (the caller only needed to know the max exceeds it).
    """
    active = [a.copy() for a in start]
    pts = [a.point() for a in active]
    f = fun(pts)
    if not np.isfinite(f):
        raise DomainError("objective is not finite at the starting point")
    lip = 1.0
    it = 0
    stopped = False
    while True:
        grads = grad(pts)
        gap, s = fw_gap(grads, pts, sets)
        if gap <= tol or it >= max_iter:
            break
        if stop_value is not None and f >= stop_value:
            stopped = True
            break
        it += 1

        # away candidates: worst active vertex per block
        away_idx, away_gap = [], 0.0
        for a, gb, zb in zip(active, grads, pts):
            scores = [float(gb @ v) for v in a.vertices]
            j = int(np.argmin(scores))
            away_idx.append(j)
            away_gap += float(gb @ zb) - scores[j]

        if gap >= away_gap:
            d = [sb - zb for sb, zb in zip(s, pts)]
            gmax, slope, away = 1.0, gap, False
        else:
            d = [zb - a.vertices[j] for a, j, zb in zip(active, away_idx, pts)]
            gmax = np.inf
            for a, j in zip(active, away_idx):
                wj = a.weights[j]
                if wj < 1.0:
                    gmax = min(gmax, wj / (1.0 - wj))
            slope, away = away_gap, True
        dnorm2 = sum(float(db @ db) for db in d)
        if dnorm2 == 0.0 or not np.isfinite(gmax):
            break

        lip *= 0.9
        slack = 8 * np.finfo(float).eps * (1.0 + abs(f))
        while True:
            gamma = min(slope / (lip * dnorm2), gmax)
            cand = [zb + gamma * db for zb, db in zip(pts, d)]
            f_new = _safe(fun, cand)
            if f_new >= f + gamma * slope - 0.5 * gamma**2 * lip * dnorm2 - slack:
                break
            lip *= 2.0
            if lip > L_MAX:
                raise LineSearchError(
                    f"backtracking failed at iteration {it} (objective {f!r}, slope {slope!r}); "
                    "objective is not concave along the search direction"
                )

        if away:
            for a, j in zip(active, away_idx):
                if a.weights[j] < 1.0:
                    a.away_update(j, gamma)
        else:
            for a, sb in zip(active, s):
                a.fw_update(sb, gamma)
        pts = [a.point() for a in active]
        f = _safe(fun, pts)
        if not np.isfinite(f):
            raise LineSearchError(f"objective left its domain after the step at iteration {it}")

    return MaxResult(pts, active, float(f), float(gap), it, gap <= tol, stopped_early=stopped)


def maximize_projected(
    fun: Callable[[list], float],
    grad: Callable[[list], list],
    sets: Sequence[FeasibleSet],
    start: Sequence[np.ndarray],
    tol: float,
    max_iter: int,
) -> MaxResult:
    """Projected gradient ascent with backtracking; FW gap used as certificate."""
    pts = [project(fs, p) for fs, p in zip(sets, start)]
    f = fun(pts)
    step = 1.0
    it = 0
    while True:
        grads = grad(pts)
        gap, _ = fw_gap(grads, pts, sets)
        if gap <= tol or it >= max_iter:
            break
        it += 1
        step *= 2.0
        while True:
            cand = [project(fs, zb + step * gb) for fs, zb, gb in zip(sets, pts, grads)]
            diff = [cb - zb for cb, zb in zip(cand, pts)]
            lin = sum(float(gb @ db) for gb, db in zip(grads, diff))
            sq = sum(float(db @ db) for db in diff)
            f_new = _safe(fun, cand)
            if f_new >= f + lin - sq / (2 * step) - 8 * np.finfo(float).eps * (1 + abs(f)):
                break
            step *= 0.5
            if step < 1e-40:
                raise LineSearchError("projected-gradient backtracking failed")
        if sq == 0.0:
            break
        pts, f = cand, f_new
    # members of an active set only need to be feasible, not extreme
    return MaxResult(pts, [ActiveSet.at_vertex(p) for p in pts], float(f), float(gap), it, gap <= tol, "projected")


def decompose(fs: FeasibleSet, p: np.ndarray, weights: np.ndarray | None = None) -> ActiveSet:
    """Write a feasible ``p`` as a convex combination of extreme points."""
    if isinstance(fs, Box):
        lo, hi = np.asarray(fs.lower), np.asarray(fs.upper)
        t = np.clip((p - lo) / (hi - lo), 0.0, 1.0)
        # staircase: corner k switches on every coordinate with t_i > theta_k
        cuts = np.unique(np.concatenate([[0.0, 1.0], t]))
        verts, w = [], []
        for a, b in zip(cuts[:-1], cuts[1:]):
            verts.append(np.where(t > a, hi, lo).astype(float))
            w.append(b - a)
        act = ActiveSet(verts, w)
    else:
        V = extreme_points(fs)
        if weights is None:
            if isinstance(fs, Simplex):
                weights = (p - fs.floor) / fs.free_mass
            else:
                weights = min_norm_point(V - p)
        weights = np.clip(weights, 0.0, None)
        act = ActiveSet(list(V), list(weights / weights.sum()))
    act._prune()
    return act


class _Param:
    """Box and simplex blocks in coordinates, polytope blocks in vertex weights."""

    def __init__(self, sets, start):
        self.blocks, x0, lb, ub, eqs = [], [], [], [], []
        off = 0
        for fs, p in zip(sets, start):
            p = project(fs, p)
            if isinstance(fs, Polytope):
                V = fs.array
                n = V.shape[0]
                x0.append(min_norm_point(V - p))
                lb += [0.0] * n
                ub += [1.0] * n
                eqs.append((off, n, 1.0))
            else:
                V, n = None, fs.dim
                x0.append(p)
                if isinstance(fs, Box):
                    lb += list(fs.lower)
                    ub += list(fs.upper)
                else:
                    lb += [fs.floor] * n
                    ub += [fs.total] * n
                    eqs.append((off, n, fs.total))
            self.blocks.append((off, n, V))
            off += n
        self.size = off
        self.u0 = np.concatenate(x0)
        self.lb, self.ub = np.asarray(lb, float), np.asarray(ub, float)
        self.E = np.zeros((len(eqs), off))
        self.e = np.array([t for _, _, t in eqs])
        for k, (o, n, _) in enumerate(eqs):
            self.E[k, o : o + n] = 1.0

    def points(self, u):
        return [u[o : o + n] @ V if V is not None else u[o : o + n] for o, n, V in self.blocks]

    def chain(self, grads):
        return np.concatenate([V @ g if V is not None else g for (o, n, V), g in zip(self.blocks, grads)])

    def active_sets(self, sets, u):
        u = np.clip(u, self.lb, self.ub)
        out = []
        for fs, (o, n, V) in zip(sets, self.blocks):
            if V is not None:
                out.append(decompose(fs, u[o : o + n] @ V, u[o : o + n]))
            else:
                out.append(decompose(fs, project(fs, u[o : o + n])))
        return out


def _newton_refine(fun, grad, sets, par: _Param, u, tol, steps=12, h=1e-7):
    """Projected Newton steps with equality constraints.

    Variables close to a bound with the gradient pointing outward are moved
    onto it; the rest take the constrained Newton step.  Steps are accepted
    while they shrink the FW gap.  The Hessian comes from central
    differences of the gradient and flat directions get the minimum-norm
    step.
    """

    def state(u):
        act = par.active_sets(sets, u)
        pts = [a.point() for a in act]
        gap, _ = fw_gap(grad(pts), pts, sets)
        return act, pts, gap

    def g_of(u):
        return par.chain(grad(par.points(u)))

    act, pts, gap = state(u)
    width = par.ub - par.lb
    for _ in range(steps):
        if gap <= tol:
            break
        g = g_of(u)
        # near a bound with the gradient pushing out: move onto the bound
        eps = 1e-5 * width
        # sum constraints: compare against the multiplier seen on the support
        gr = g.copy()
        for k in range(par.E.shape[0]):
            blk = par.E[k] > 0
            supp = blk & (u > par.lb + eps) & (u < par.ub - eps)
            gr[blk] -= g[supp].mean() if supp.any() else g[blk].mean()
        at_lo = (u <= par.lb + eps) & (gr < 0)
        at_hi = (u >= par.ub - eps) & (gr > 0)
        fixed = at_lo | at_hi
        free = np.nonzero(~fixed)[0]
        d = np.zeros(par.size)
        d[at_lo] = par.lb[at_lo] - u[at_lo]
        d[at_hi] = par.ub[at_hi] - u[at_hi]
        if free.size:
            H = np.empty((par.size, free.size))
            try:
                for k, i in enumerate(free):
                    e = np.zeros(par.size)
                    e[i] = h
                    H[:, k] = (g_of(u + e) - g_of(u - e)) / (2 * h)
            except (DomainError, ValueError):
                break
            Hff = H[free]
            Hff = 0.5 * (Hff + Hff.T)
            # curvature coupling to the fixed moves, by symmetry of the Hessian
            Hfa = H[np.nonzero(fixed)[0]].T
            Ef = par.E[:, free]
            m = Ef.shape[0]
            K = np.block([[Hff, Ef.T], [Ef, np.zeros((m, m))]])
            rhs = np.concatenate([-g[free] - Hfa @ d[fixed], -par.E @ d])
            d[free] = np.linalg.lstsq(K, rhs, rcond=1e-14)[0][: free.size]
        # largest step keeping the bounds
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = np.where(d > 0, (par.ub - u) / d, np.inf)
            t_lo = np.where(d < 0, (par.lb - u) / d, np.inf)
        t = min(1.0, float(np.min(t_hi)), float(np.min(t_lo)))
        improved = False
        while t > 1e-6:
            cand = np.clip(u + t * d, par.lb, par.ub)
            try:
                c_act, c_pts, c_gap = state(cand)
            except (DomainError, ValueError):
                c_gap = np.inf
            if c_gap < gap:
                u, act, pts, gap, improved = cand, c_act, c_pts, c_gap, True
                break
            t *= 0.5
        if not improved:
            break
    return u, act, pts, gap


def maximize_polish(
    fun: Callable[[list], float],
    grad: Callable[[list], list],
    sets: Sequence[FeasibleSet],
    start: Sequence[np.ndarray],
    tol: float,
    max_iter: int = 300,
) -> MaxResult:
    """Quasi-Newton polish (trust-constr, BFGS) plus Newton refinement.

    The polished point is certified by its own FW gap like any other.
    """
    par = _Param(sets, start)

    def neg_f(u):
        try:
            v = fun(par.points(u))
        except (DomainError, ValueError, FloatingPointError):
            return np.inf
        return -v if np.isfinite(v) else np.inf

    def neg_g(u):
        return -par.chain(grad(par.points(u)))

    cons = [LinearConstraint(par.E, par.e, par.e)] if par.E.shape[0] else []
    with warnings.catch_warnings(), np.errstate(all="ignore"):
        warnings.simplefilter("ignore")
        res = minimize(
            neg_f,
            par.u0,
            jac=neg_g,
            method="trust-constr",
            bounds=Bounds(par.lb, par.ub),
            constraints=cons,
            options={"gtol": 1e-13, "xtol": 1e-16, "maxiter": max_iter},
        )
    u = np.clip(res.x, par.lb, par.ub)
    u, active, pts, gap = _newton_refine(fun, grad, sets, par, u, tol)
    f = _safe(fun, pts)
    return MaxResult(pts, active, float(f), float(gap), int(res.nit), gap <= tol, "newton")


PILOT_ITER = 200


def maximize_certified(
    fun: Callable[[list], float],
    grad: Callable[[list], list],
    sets: Sequence[FeasibleSet],
    start: Sequence[ActiveSet],
    tol: float,
    max_iter: int,
    stop_value: float | None = None,
) -> MaxResult:
    """Frank-Wolfe, then a second-order polish, then FW again, then projected gradient.

    Each stage starts from the best certified point so far and the result
    with the smallest upper bound ``value + gap`` is returned.
    """
    res = maximize(fun, grad, sets, start, tol, min(PILOT_ITER, max_iter), stop_value=stop_value)
    if res.converged or res.stopped_early:
        return res
    best = res
    used = res.iterations

    def better(a: MaxResult, b: MaxResult) -> MaxResult:
        return a if np.isfinite(a.value) and a.upper < b.upper else b

    pol = maximize_polish(fun, grad, sets, best.points, tol)
    best = better(pol, best)
    if best.converged:
        return best
    if used < max_iter:
        more = maximize(fun, grad, sets, best.active, tol, max_iter - used, stop_value=stop_value)
        more.iterations += used
        if more.stopped_early:
            return more
        best = better(more, best)
        if best.converged:
            return best
    logger.info("FW and polish stopped at gap %.3g > %.3g; trying projected gradient", best.gap, tol)
    alt = maximize_projected(fun, grad, sets, best.points, tol, max_iter)
    return better(alt, best)
