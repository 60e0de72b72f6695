"""Compact convex state sets: boxes, floored simplices and vertex polytopes.

The solvers only need a linear maximization oracle (``lmo``) and, for the
projected-gradient fallback, Euclidean projection.  Every set also exposes
its vertices so the model can check that affine maps keep it inside the
parameter domains.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Union

import numpy as np

MAX_BOX_ENUM_DIM = 20


class GeometryError(ValueError):
    pass


def _vec(x, name="vector") -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise GeometryError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo, hi = _vec(self.lower, "lower"), _vec(self.upper, "upper")
        if lo.shape != hi.shape:
            raise GeometryError("box lower/upper differ in length")
        if not np.all(lo < hi):
            raise GeometryError("box needs lower < upper in every coordinate")
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def to_dict(self) -> dict:
        return {"kind": "box", "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class Simplex:
    """``{x : x_i >= floor, sum(x) = total}``."""

    dim: int
    floor: float = 0.0
    total: float = 1.0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise GeometryError("simplex dim must be a positive integer")
        if self.floor < 0 or self.total <= 0:
            raise GeometryError("simplex needs floor >= 0 and total > 0")
        if self.dim * self.floor >= self.total:
            raise GeometryError("simplex needs dim * floor < total")
        object.__setattr__(self, "floor", float(self.floor))
        object.__setattr__(self, "total", float(self.total))

    @property
    def free_mass(self) -> float:
        return self.total - self.dim * self.floor

    def to_dict(self) -> dict:
        return {"kind": "simplex", "dim": self.dim, "floor": self.floor, "total": self.total}


@dataclass(frozen=True)
class Polytope:
    """Convex hull of a finite list of vertices."""

    vertices: tuple

    def __post_init__(self):
        try:
            V = np.asarray(self.vertices, dtype=float)
        except ValueError:
            raise GeometryError("polytope vertices must all have the same dimension") from None
        if V.ndim != 2 or V.shape[0] < 1 or V.shape[1] < 1:
            raise GeometryError("polytope needs at least one vertex, all of equal dimension")
        if not np.all(np.isfinite(V)):
            raise GeometryError("polytope vertices must be finite")
        object.__setattr__(self, "vertices", tuple(tuple(v) for v in V.tolist()))

    @property
    def dim(self) -> int:
        return len(self.vertices[0])

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": "polytope", "vertices": [list(v) for v in self.vertices]}


FeasibleSet = Union[Box, Simplex, Polytope]


def feasible_set_from_dict(d: dict) -> FeasibleSet:
    kind = d.get("kind")
    if kind == "box":
        return Box(tuple(d["lower"]), tuple(d["upper"]))
    if kind == "simplex":
        return Simplex(int(d["dim"]), float(d.get("floor", 0.0)), float(d.get("total", 1.0)))
    if kind == "polytope":
        return Polytope(tuple(tuple(v) for v in d["vertices"]))
    raise GeometryError(f"unknown feasible set kind {kind!r}")


def _check_dim(fs: FeasibleSet, v: np.ndarray, what: str) -> np.ndarray:
    v = _vec(v, what)
    if v.shape[0] != fs.dim:
        raise GeometryError(f"{what} has dimension {v.shape[0]}, set has dimension {fs.dim}")
    return v


def lmo(fs: FeasibleSet, direction) -> np.ndarray:
    """Extreme point maximizing ``direction @ v``; ties go to the lowest index."""
    d = _check_dim(fs, direction, "direction")
    if isinstance(fs, Box):
        # a zero component is a tie; lowest coordinate value wins
        return np.where(d > 0, fs.upper, fs.lower).astype(float)
    if isinstance(fs, Simplex):
        out = np.full(fs.dim, fs.floor)
        out[int(np.argmax(d))] += fs.free_mass
        return out
    V = fs.array
    return V[int(np.argmax(V @ d))].copy()


def project_simplex(v, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum x = total}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def min_norm_point(P: np.ndarray, tol: float = 1e-12, max_iter: int = 1000) -> np.ndarray:
    """Wolfe's active-set algorithm for the min-norm point of ``conv(P)``.

    Returns the convex weights over the rows of ``P``.
    """
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    sq = np.einsum("ij,ij->i", P, P)
    scale = max(1.0, float(sq.max()))
    start = int(np.argmin(sq))
    S = [start]
    w = np.array([1.0])
    for _ in range(max_iter):
        x = w @ P[S]
        j = int(np.argmin(P @ x))
        if x @ x - P[j] @ x <= tol * scale or j in S:
            break
        S.append(j)
        w = np.append(w, 0.0)
        while True:
            # affine min-norm point of the current corral
            Q = P[S]
            k = len(S)
            M = np.zeros((k + 1, k + 1))
            M[:k, :k] = Q @ Q.T
            M[:k, k] = 1.0
            M[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
            beta = sol[:k]
            if np.all(beta > 1e-15):
                w = beta
                break
            mask = beta <= 1e-15
            denom = w[mask] - beta[mask]
            theta = np.min(np.where(denom > 0, w[mask] / np.where(denom > 0, denom, 1.0), 1.0))
            theta = min(max(theta, 0.0), 1.0)
            w = (1 - theta) * w + theta * beta
            keep = w > 1e-15
            S = [s for s, kp in zip(S, keep) if kp]
            w = w[keep]
            w = w / w.sum()
    out = np.zeros(m)
    out[S] = w
    return out


def project(fs: FeasibleSet, point) -> np.ndarray:
    """Euclidean projection of ``point`` onto the set."""
    p = _check_dim(fs, point, "point")
    if isinstance(fs, Box):
        return np.clip(p, fs.lower, fs.upper)
    if isinstance(fs, Simplex):
        return fs.floor + project_simplex(p - fs.floor, fs.free_mass)
    V = fs.array
    if V.shape[0] == 1:
        return V[0].copy()
    w = min_norm_point(V - p)
    return w @ V


@dataclass(frozen=True)
class BoxIntervals:
    """Stand-in for the vertex list of a box too large to enumerate.

    Affine images of a box are bounded coordinate-wise by interval
    arithmetic, which is all the interior checks need.
    """

    lower: np.ndarray
    upper: np.ndarray

    def image_bounds(self, M: np.ndarray, b: np.ndarray):
        lo = b + np.minimum(M * self.lower, M * self.upper).sum(axis=1)
        hi = b + np.maximum(M * self.lower, M * self.upper).sum(axis=1)
        return lo, hi


def extreme_points(fs: FeasibleSet):
    """Vertex array (rows), or a ``BoxIntervals`` for boxes above 20 dimensions."""
    if isinstance(fs, Box):
        if fs.dim > MAX_BOX_ENUM_DIM:
            return BoxIntervals(np.asarray(fs.lower), np.asarray(fs.upper))
        lo, hi = np.asarray(fs.lower), np.asarray(fs.upper)
        corners = np.array(list(itertools.product((0, 1), repeat=fs.dim)), dtype=bool)
        return np.where(corners, hi, lo)
    if isinstance(fs, Simplex):
        return fs.floor + fs.free_mass * np.eye(fs.dim)
    return fs.array.copy()


def interior_point(fs: FeasibleSet) -> np.ndarray:
    if isinstance(fs, Box):
        return 0.5 * (np.asarray(fs.lower) + np.asarray(fs.upper))
    if isinstance(fs, Simplex):
        return np.full(fs.dim, fs.total / fs.dim)
    return fs.array.mean(axis=0)


def contains(fs: FeasibleSet, point, tol: float = 1e-9) -> bool:
    p = _check_dim(fs, point, "point")
    scale = max(1.0, float(np.max(np.abs(p))))
    return bool(np.linalg.norm(project(fs, p) - p) <= tol * scale)


def random_point(fs: FeasibleSet, rng: np.random.Generator) -> np.ndarray:
    """A random element of the set (uniform for boxes, Dirichlet weights otherwise)."""
    if isinstance(fs, Box):
        return rng.uniform(fs.lower, fs.upper)
    V = extreme_points(fs)
    return rng.dirichlet(np.ones(V.shape[0])) @ V
