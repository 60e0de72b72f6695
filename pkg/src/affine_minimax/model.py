"""Problem specification: data types, JSON parsing and domain validation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields, replace

import jsonschema
import numpy as np

from .densities import SIMPLEX_SUM_TOL, Discrete, FamilyKind, GaussianVec, PoissonVec, family_from_dict
from .geometry import BoxIntervals, FeasibleSet, GeometryError, extreme_points, feasible_set_from_dict

logger = logging.getLogger(__name__)

SPEC_VERSION = 1
EPSILON_MAX = 0.25


class SpecError(ValueError):
    """Invalid problem document; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class SolverConfig:
    tol_inner: float = 1e-7
    tol_alpha: float = 1e-6
    alpha_min: float = 1e-8
    alpha_max: float = 1e8
    max_iter_inner: int = 10_000
    interior_margin: float = 1e-6
    seed: int = 0
    constant_mode: str = "certified"

    def __post_init__(self):
        for name in ("tol_inner", "tol_alpha", "alpha_min", "alpha_max", "interior_margin"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise SpecError(f"solver.{name}", f"must be a positive finite number, got {v!r}")
        if not self.alpha_min < self.alpha_max:
            raise SpecError("solver.alpha_min", "alpha_min must be < alpha_max")
        if int(self.max_iter_inner) != self.max_iter_inner or self.max_iter_inner < 1:
            raise SpecError("solver.max_iter_inner", "must be a positive integer")
        if int(self.seed) != self.seed or self.seed < 0:
            raise SpecError("solver.seed", "must be a non-negative integer")
        if self.constant_mode not in ("certified", "closed-form"):
            raise SpecError("solver.constant_mode", "must be 'certified' or 'closed-form'")


@dataclass(frozen=True, eq=False)
class ChannelModel:
    """One measurement type: density family, affine map ``x -> M x + b``, repetitions."""

    family: FamilyKind
    map_matrix: np.ndarray
    map_offset: np.ndarray
    repetitions: int = 1

    def __post_init__(self):
        M = np.array(self.map_matrix, dtype=float, ndmin=2)
        b = np.array(self.map_offset, dtype=float, ndmin=1)
        M.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "map_matrix", M)
        object.__setattr__(self, "map_offset", b)

    def apply(self, x) -> np.ndarray:
        return self.map_matrix @ np.asarray(x, dtype=float) + self.map_offset

    def to_dict(self) -> dict:
        return {
            "family": self.family.to_dict(),
            "map_matrix": self.map_matrix.tolist(),
            "map_offset": self.map_offset.tolist(),
            "repetitions": self.repetitions,
        }

    def __eq__(self, other):
        if not isinstance(other, ChannelModel):
            return NotImplemented
        return (
            self.family == other.family
            and self.repetitions == other.repetitions
            and np.array_equal(self.map_matrix, other.map_matrix)
            and np.array_equal(self.map_offset, other.map_offset)
        )


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    feasible_set: FeasibleSet
    g: np.ndarray
    channels: tuple
    epsilon: float
    delta: float
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        g = np.array(self.g, dtype=float, ndmin=1)
        g.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    @property
    def r(self) -> float:
        return math.log(2.0 / self.epsilon)

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        return (
            self.feasible_set == other.feasible_set
            and np.array_equal(self.g, other.g)
            and self.channels == other.channels
            and self.epsilon == other.epsilon
            and self.delta == other.delta
            and self.solver == other.solver
        )


_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["version", "g", "feasible_set", "channels", "epsilon", "delta"],
    "properties": {
        "version": {"const": SPEC_VERSION},
        "g": _VEC,
        "feasible_set": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["box", "simplex", "polytope"]}},
            "allOf": [
                {
                    "if": {"properties": {"kind": {"const": "box"}}},
                    "then": {"required": ["lower", "upper"], "properties": {"lower": _VEC, "upper": _VEC}},
                },
                {
                    "if": {"properties": {"kind": {"const": "simplex"}}},
                    "then": {
                        "required": ["dim"],
                        "properties": {"dim": {"type": "integer", "minimum": 1}, "floor": _NUM, "total": _NUM},
                    },
                },
                {
                    "if": {"properties": {"kind": {"const": "polytope"}}},
                    "then": {
                        "required": ["vertices"],
                        "properties": {"vertices": {"type": "array", "items": _VEC, "minItems": 1}},
                    },
                },
            ],
        },
        "channels": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["family", "map_matrix", "map_offset"],
                "properties": {
                    "family": {
                        "type": "object",
                        "required": ["kind"],
                        "properties": {
                            "kind": {"enum": ["discrete", "poisson", "gaussian"]},
                            "n_outcomes": {"type": "integer", "minimum": 2},
                            "dim": {"type": "integer", "minimum": 1},
                            "sigmas": _VEC,
                        },
                        "allOf": [
                            {
                                "if": {"properties": {"kind": {"const": "discrete"}}},
                                "then": {"required": ["n_outcomes"]},
                            },
                            {
                                "if": {"properties": {"kind": {"const": "poisson"}}},
                                "then": {"required": ["dim"]},
                            },
                            {
                                "if": {"properties": {"kind": {"const": "gaussian"}}},
                                "then": {"required": ["dim", "sigmas"]},
                            },
                        ],
                    },
                    "map_matrix": {"type": "array", "items": _VEC, "minItems": 1},
                    "map_offset": _VEC,
                    "repetitions": {"type": "integer"},
                },
            },
        },
        "epsilon": _NUM,
        "delta": _NUM,
        "solver": {
            "type": "object",
            "properties": {
                "tol_inner": _NUM,
                "tol_alpha": _NUM,
                "alpha_min": _NUM,
                "alpha_max": _NUM,
                "max_iter_inner": {"type": "integer"},
                "interior_margin": _NUM,
                "seed": {"type": "integer", "minimum": 0},
                "constant_mode": {"enum": ["certified", "closed-form"]},
            },
            "additionalProperties": False,
        },
    },
}


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def check_epsilon(epsilon: float, allow_large_epsilon: bool = False) -> None:
    upper = 1.0 if allow_large_epsilon else EPSILON_MAX
    if not (0.0 < epsilon < upper):
        raise SpecError("epsilon", f"epsilon out of range (0, {upper:g})")
    if epsilon >= EPSILON_MAX:
        logger.warning("epsilon=%g is outside (0, 0.25); the near-optimality factor is undefined", epsilon)


def problem_from_dict(doc: dict, *, allow_large_epsilon: bool = False) -> ProblemSpec:
    """Build a ``ProblemSpec`` from an already-decoded JSON object."""
    validator = jsonschema.Draft202012Validator(PROBLEM_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise SpecError(_path(err.absolute_path), err.message)

    check_epsilon(float(doc["epsilon"]), allow_large_epsilon)
    if not doc["delta"] > 0:
        raise SpecError("delta", "delta must be > 0")

    try:
        fs = feasible_set_from_dict(doc["feasible_set"])
    except GeometryError as exc:
        raise SpecError("feasible_set", str(exc)) from None
    g = np.asarray(doc["g"], dtype=float)
    if g.shape[0] != fs.dim:
        raise SpecError("g", f"dimension mismatch: g has length {g.shape[0]}, feasible_set has dimension {fs.dim}")

    channels = []
    for i, ch in enumerate(doc["channels"]):
        base = f"channels[{i}]"
        try:
            fam = family_from_dict(ch["family"])
        except (ValueError, KeyError) as exc:
            raise SpecError(f"{base}.family", str(exc)) from None
        rows = ch["map_matrix"]
        if len({len(r) for r in rows}) != 1:
            raise SpecError(f"{base}.map_matrix", "rows have unequal length")
        M = np.asarray(rows, dtype=float)
        b = np.asarray(ch["map_offset"], dtype=float)
        if M.shape[1] != fs.dim:
            raise SpecError(
                f"{base}.map_matrix",
                f"dimension mismatch: map_matrix has {M.shape[1]} columns, feasible_set has dimension {fs.dim}",
            )
        if M.shape[0] != fam.param_dim:
            raise SpecError(
                f"{base}.map_matrix",
                f"dimension mismatch: map_matrix has {M.shape[0]} rows, family parameter has dimension {fam.param_dim}",
            )
        if b.shape[0] != fam.param_dim:
            raise SpecError(f"{base}.map_offset", f"dimension mismatch: expected length {fam.param_dim}")
        reps = ch.get("repetitions", 1)
        if reps < 1:
            raise SpecError(f"{base}.repetitions", "repetitions must be >= 1")
        channels.append(ChannelModel(fam, M, b, int(reps)))

    try:
        solver = SolverConfig(**doc.get("solver", {}))
    except TypeError as exc:
        raise SpecError("solver", str(exc)) from None
    return ProblemSpec(fs, g, tuple(channels), float(doc["epsilon"]), float(doc["delta"]), solver)


def parse_problem(text: str, *, allow_large_epsilon: bool = False) -> ProblemSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError("", f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SpecError("", "problem document must be a JSON object")
    return problem_from_dict(doc, allow_large_epsilon=allow_large_epsilon)


def problem_to_dict(spec: ProblemSpec) -> dict:
    return {
        "version": SPEC_VERSION,
        "g": spec.g.tolist(),
        "feasible_set": spec.feasible_set.to_dict(),
        "channels": [ch.to_dict() for ch in spec.channels],
        "epsilon": spec.epsilon,
        "delta": spec.delta,
        "solver": {f.name: getattr(spec.solver, f.name) for f in fields(SolverConfig)},
    }


def serialize_problem(spec: ProblemSpec) -> str:
    return json.dumps(problem_to_dict(spec), indent=2)


@dataclass(frozen=True)
class Violation:
    channel: int | None
    vertex: int | None
    message: str

    def __str__(self):
        where = []
        if self.channel is not None:
            where.append(f"channel {self.channel}")
        if self.vertex is not None:
            where.append(f"vertex {self.vertex}")
        return f"{', '.join(where)}: {self.message}" if where else self.message


def _family_bounds(fam: FamilyKind, lo: np.ndarray, hi: np.ndarray, margin: float):
    """Violations for a parameter known only to lie in ``[lo, hi]``."""
    out = []
    if isinstance(fam, (Discrete, PoissonVec)):
        bad = np.nonzero(lo < margin)[0]
        if bad.size:
            out.append(f"parameter coordinates {bad.tolist()} may fall below margin {margin:g} (min {lo.min():.6g})")
    return out


def _family_point(fam: FamilyKind, mu: np.ndarray, margin: float):
    out = []
    if isinstance(fam, (Discrete, PoissonVec)):
        bad = np.nonzero(mu < margin)[0]
        if bad.size:
            what = "probability" if isinstance(fam, Discrete) else "rate"
            out.append(
                f"{what} coordinates {bad.tolist()} below interior margin {margin:g}: "
                f"{np.round(mu, 12).tolist()}"
            )
    if isinstance(fam, Discrete) and abs(mu.sum() - 1.0) > SIMPLEX_SUM_TOL:
        out.append(f"probabilities sum to {mu.sum():.12g}, not 1")
    if isinstance(fam, GaussianVec) and not np.all(np.isfinite(mu)):
        out.append("non-finite mean")
    return out


def validate_problem(spec: ProblemSpec) -> list[Violation]:
    """Every parameter-domain violation of ``spec`` (empty list means valid)."""
    out: list[Violation] = []
    if not spec.channels:
        out.append(Violation(None, None, "channel list is empty"))
    margin = spec.solver.interior_margin
    pts = extreme_points(spec.feasible_set)
    for li, ch in enumerate(spec.channels):
        if ch.repetitions < 1:
            out.append(Violation(li, None, f"repetitions must be >= 1, got {ch.repetitions}"))
        if ch.map_matrix.shape[1] != spec.dim:
            out.append(Violation(li, None, "map_matrix input dimension does not match the state dimension"))
            continue
        if isinstance(pts, BoxIntervals):
            lo, hi = pts.image_bounds(ch.map_matrix, ch.map_offset)
            for msg in _family_bounds(ch.family, lo, hi, margin):
                out.append(Violation(li, None, msg))
            if isinstance(ch.family, Discrete):
                row = ch.map_matrix.sum(axis=0)
                if np.max(np.abs(row)) > SIMPLEX_SUM_TOL or abs(ch.map_offset.sum() - 1) > SIMPLEX_SUM_TOL:
                    out.append(Violation(li, None, "affine image does not stay on the probability simplex"))
            continue
        for vi, v in enumerate(pts):
            for msg in _family_point(ch.family, ch.apply(v), margin):
                out.append(Violation(li, vi, msg))
    return out
