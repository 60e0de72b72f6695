"""Canonical affine estimator built from a saddle solution.

The estimator is

    g_hat(w) = c + sum_l sum_j (alpha/2) [ln p_{mu_l}(w_lj) - ln p_{nu_l}(w_lj)]

with ``mu_l = A_l x*`` and ``nu_l = A_l y*``.  Its half-width is certified
by two concave maximizations over the state set (see ``certify``), so the
printed risk holds even when the saddle point is only approximate.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__
from .densities import Discrete, family_from_dict
from .frankwolfe import ActiveSet, maximize_certified
from .model import ProblemSpec, SolverConfig
from .saddle import SaddleSolution, minimize_alpha

logger = logging.getLogger(__name__)

ESTIMATOR_VERSION = 1


class EstimatorFormatError(ValueError):
    pass


class ObservationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EstimatorChannel:
    family: object
    mu_star: np.ndarray
    nu_star: np.ndarray
    repetitions: int

    def __eq__(self, other):
        return (
            isinstance(other, EstimatorChannel)
            and self.family == other.family
            and self.repetitions == other.repetitions
            and np.array_equal(self.mu_star, other.mu_star)
            and np.array_equal(self.nu_star, other.nu_star)
        )


@dataclass(frozen=True, eq=False)
class AffineEstimator:
    alpha: float
    channels: tuple
    constant_c: float
    risk: float
    epsilon: float
    g_x_star: float
    g_y_star: float
    provenance: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, AffineEstimator):
            return NotImplemented
        return all(
            getattr(self, f.name) == getattr(other, f.name) for f in fields(self) if f.name != "provenance"
        ) and json.dumps(self.provenance, sort_keys=True) == json.dumps(other.provenance, sort_keys=True)

    @property
    def interval_halfwidth(self) -> float:
        return self.risk


@dataclass(frozen=True)
class Certificate:
    U_upper: float
    V_upper: float
    U_value: float
    V_value: float
    c: float
    gaps: tuple


def _channel_params(spec: ProblemSpec, x, y):
    return [(ch, ch.apply(x), ch.apply(y)) for ch in spec.channels]


def _tilted_max(spec: ProblemSpec, alpha: float, sign: float, params, start: ActiveSet, swap: bool):
    """``max_z sign*g.z + alpha sum_l R_l ln T(A_l z; a_l, b_l)`` with a FW gap."""

    def fun(z):
        x = z[0]
        total = sign * float(spec.g @ x)
        for ch, mu, nu in params:
            a, b = (nu, mu) if swap else (mu, nu)
            total += alpha * ch.repetitions * ch.family.tilted_affinity_log(ch.apply(x), a, b)
        return total

    def grad(z):
        x = z[0]
        out = sign * spec.g.astype(float)
        for ch, mu, nu in params:
            a, b = (nu, mu) if swap else (mu, nu)
            out = out + alpha * ch.repetitions * (ch.map_matrix.T @ ch.family.tilted_affinity_grad(ch.apply(x), a, b))
        return [out]

    cfg = spec.solver
    return maximize_certified(fun, grad, [spec.feasible_set], [start], cfg.tol_inner, cfg.max_iter_inner)


def certify(spec: ProblemSpec, saddle: SaddleSolution) -> Certificate:
    """Certified upper bounds on the two separable maximizations.

    ``U = max_x [g.x + alpha sum_l R_l ln T(A_l x; mu_l, nu_l)]`` and
    ``V = max_y [-g.y + alpha sum_l R_l ln T(A_l y; nu_l, mu_l)]``.
    For any constant ``c`` the estimator ``phi + c`` then satisfies
    ``P(|g_hat - g.x| >= max(U - c, V + c) + alpha r) <= epsilon`` on all of X.
    ``c = (U_upper - V_upper)/2`` balances the two sides.
    """
    inner = saddle.inner
    alpha = saddle.alpha_star
    params = _channel_params(spec, inner.x_star, inner.y_star)
    if inner.active is not None:
        sx, sy = inner.active[0].copy(), inner.active[1].copy()
    else:
        sx, sy = ActiveSet.at_vertex(inner.x_star), ActiveSet.at_vertex(inner.y_star)
    u = _tilted_max(spec, alpha, 1.0, params, sx, swap=False)
    v = _tilted_max(spec, alpha, -1.0, params, sy, swap=True)
    if not (u.converged and v.converged):
        logger.warning("certification solves stopped at gaps %.3g / %.3g", u.gap, v.gap)
    return Certificate(
        U_upper=u.upper,
        V_upper=v.upper,
        U_value=u.value,
        V_value=v.value,
        c=0.5 * (u.upper - v.upper),
        gaps=(u.gap, v.gap),
    )


def simple_constant(spec: ProblemSpec, saddle: SaddleSolution) -> float:
    """Closed-form constant ``(g.x* + g.y*)/2``."""
    return 0.5 * float(spec.g @ saddle.inner.x_star + spec.g @ saddle.inner.y_star)


def build(spec: ProblemSpec, saddle: SaddleSolution) -> AffineEstimator:
    cfg = spec.solver
    alpha = saddle.alpha_star
    inner = saddle.inner
    cert = certify(spec, saddle)
    c_closed = simple_constant(spec, saddle)
    c = cert.c if cfg.constant_mode == "certified" else c_closed
    risk = max(cert.U_upper - c, cert.V_upper + c) + alpha * saddle.r

    chans = []
    phi_tables = []
    for li, (ch, mu, nu) in enumerate(_channel_params(spec, inner.x_star, inner.y_star)):
        mu = ch.family.check(mu)
        nu = ch.family.check(nu, "nu")
        chans.append(EstimatorChannel(ch.family, mu, nu, ch.repetitions))
        if isinstance(ch.family, Discrete):
            phi_tables.append({"channel": li, "phi": (0.5 * alpha * (np.log(mu) - np.log(nu))).tolist()})

    if not saddle.precision_met:
        logger.warning(
            "requested delta %.3g not met (achieved %.3g); the reported risk is certified regardless",
            spec.delta,
            saddle.delta_solver,
        )
    provenance = {
        "software_version": __version__,
        "constant_mode": cfg.constant_mode,
        "closed_form_constant": c_closed,
        "certified_constant": cert.c,
        "constant_difference": cert.c - c_closed,
        "U_upper": cert.U_upper,
        "V_upper": cert.V_upper,
        "certification_gaps": list(cert.gaps),
        "psi_lower": saddle.psi_lower,
        "psi_upper": saddle.psi_upper,
        "saddle_lower_bound": saddle.phi2_lower,
        "delta_requested": spec.delta,
        "delta_achieved": saddle.delta_solver,
        "inner_fw_gap": inner.fw_gap,
        "inner_iterations": inner.iterations,
        "r": saddle.r,
        "flags": saddle.flags,
        "x_star": inner.x_star.tolist(),
        "y_star": inner.y_star.tolist(),
        "phi_tables": phi_tables,
        "solver": {f.name: getattr(cfg, f.name) for f in fields(SolverConfig)},
        "trace": [list(t) for t in saddle.trace],
    }
    return AffineEstimator(
        alpha=alpha,
        channels=tuple(chans),
        constant_c=float(c),
        risk=float(risk),
        epsilon=spec.epsilon,
        g_x_star=float(spec.g @ inner.x_star),
        g_y_star=float(spec.g @ inner.y_star),
        provenance=provenance,
    )


def solve(spec: ProblemSpec) -> AffineEstimator:
    """Saddle search followed by estimator construction."""
    return build(spec, minimize_alpha(spec))


# observations


def parse_observations(doc) -> dict:
    """``{"channels": [{"index": l, "outcomes": [...]}]}`` -> ``{l: outcomes}``."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    try:
        items = doc["channels"]
        out = {}
        for item in items:
            idx = int(item["index"])
            if idx in out:
                raise ObservationError(f"channel {idx} listed twice")
            out[idx] = list(item["outcomes"])
    except (KeyError, TypeError) as exc:
        raise ObservationError(f"malformed observation document: {exc}") from None
    return out


def phi_part(est: AffineEstimator, index: int, outcomes) -> float:
    ch = est.channels[index]
    half = 0.5 * est.alpha
    return sum(half * (ch.family.log_density(ch.mu_star, w) - ch.family.log_density(ch.nu_star, w)) for w in outcomes)


def evaluate(est: AffineEstimator, obs) -> float:
    """Estimate of ``g.x`` from one full observation set.

    ``obs`` maps channel index to its list of outcomes, or is the JSON
    document accepted by ``parse_observations``.
    """
    if not isinstance(obs, dict) or "channels" in obs:
        obs = parse_observations(obs)
    extra = set(obs) - set(range(len(est.channels)))
    if extra:
        raise ObservationError(f"unknown channel indices {sorted(extra)}")
    total = est.constant_c
    for li, ch in enumerate(est.channels):
        outs = obs.get(li, [])
        if len(outs) != ch.repetitions:
            raise ObservationError(f"channel {li}: expected {ch.repetitions} outcomes, got {len(outs)}")
        for w in outs:
            ch.family.check_outcome(w)
        total += phi_part(est, li, outs)
    return float(total)


def evaluate_many(est: AffineEstimator, samples: list) -> np.ndarray:
    """Vectorized ``evaluate``; ``samples[l]`` has shape ``(n, R_l, ...)``."""
    n = len(samples[0])
    out = np.full(n, est.constant_c)
    half = 0.5 * est.alpha
    for ch, draws in zip(est.channels, samples):
        draws = np.asarray(draws)
        flat = draws.reshape(n * ch.repetitions, *draws.shape[2:])
        lr = ch.family.log_ratio_many(ch.mu_star, ch.nu_star, flat).reshape(n, ch.repetitions)
        out += half * lr.sum(axis=1)
    return out


# reporting


def near_optimality_factor(epsilon: float) -> float | None:
    """``2 + ln 64 / ln(0.25/eps)``; ``None`` outside ``(0, 0.25)``."""
    if not 0.0 < epsilon < 0.25:
        return None
    return 2.0 + math.log(64.0) / math.log(0.25 / epsilon)


@dataclass(frozen=True)
class RiskReport:
    risk: float
    epsilon: float
    alpha: float
    theta: float | None
    delta_achieved: float | None
    constant_c: float
    closed_form_constant: float | None
    flags: tuple
    note: str

    def lines(self) -> list[str]:
        out = [
            f"risk (half-width)      : {self.risk!r}",
            f"epsilon                : {self.epsilon!r}",
            f"alpha*                 : {self.alpha!r}",
        ]
        if self.theta is not None:
            out.append(f"near-optimality factor : {self.theta!r}")
        out.append(f"delta achieved         : {self.delta_achieved!r}")
        out.append(f"constant c             : {self.constant_c!r}")
        if self.closed_form_constant is not None:
            out.append(f"closed-form constant   : {self.closed_form_constant!r}")
        if self.flags:
            out.append(f"flags                  : {', '.join(self.flags)}")
        out.append(f"note                   : {self.note}")
        return out

    def __str__(self):
        return "\n".join(self.lines())

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}


def report(est: AffineEstimator) -> RiskReport:
    theta = near_optimality_factor(est.epsilon)
    if theta is None:
        note = "near-optimality factor undefined for epsilon outside (0, 0.25)"
    else:
        note = "risk <= theta * (minimax risk) + solver slack; the minimax risk itself is not computed"
    prov = est.provenance
    return RiskReport(
        risk=est.risk,
        epsilon=est.epsilon,
        alpha=est.alpha,
        theta=theta,
        delta_achieved=prov.get("delta_achieved"),
        constant_c=est.constant_c,
        closed_form_constant=prov.get("closed_form_constant"),
        flags=tuple(prov.get("flags", ())),
        note=note,
    )


# serialization


def estimator_to_dict(est: AffineEstimator) -> dict:
    return {
        "version": ESTIMATOR_VERSION,
        "alpha": est.alpha,
        "constant_c": est.constant_c,
        "risk": est.risk,
        "epsilon": est.epsilon,
        "g_x_star": est.g_x_star,
        "g_y_star": est.g_y_star,
        "channels": [
            {
                "family": ch.family.to_dict(),
                "mu_star": ch.mu_star.tolist(),
                "nu_star": ch.nu_star.tolist(),
                "repetitions": ch.repetitions,
            }
            for ch in est.channels
        ],
        "provenance": est.provenance,
    }


def serialize(est: AffineEstimator) -> str:
    return json.dumps(estimator_to_dict(est), indent=2, sort_keys=True)


def deserialize(text) -> AffineEstimator:
    try:
        doc = json.loads(text) if isinstance(text, str) else text
    except json.JSONDecodeError as exc:
        raise EstimatorFormatError(f"malformed estimator JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise EstimatorFormatError("estimator document must be a JSON object")
    version = doc.get("version")
    if version != ESTIMATOR_VERSION:
        raise EstimatorFormatError(f"unsupported estimator version {version!r} (expected {ESTIMATOR_VERSION})")
    try:
        chans = tuple(
            EstimatorChannel(
                family_from_dict(ch["family"]),
                np.asarray(ch["mu_star"], dtype=float),
                np.asarray(ch["nu_star"], dtype=float),
                int(ch["repetitions"]),
            )
            for ch in doc["channels"]
        )
        return AffineEstimator(
            alpha=float(doc["alpha"]),
            channels=chans,
            constant_c=float(doc["constant_c"]),
            risk=float(doc["risk"]),
            epsilon=float(doc["epsilon"]),
            g_x_star=float(doc["g_x_star"]),
            g_y_star=float(doc["g_y_star"]),
            provenance=dict(doc.get("provenance", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise EstimatorFormatError(f"schema violation: {exc}") from None
