"""Independent checks: Monte Carlo coverage, grid oracle, finite differences.

Nothing in here is used to *build* an estimator.  The grid oracle and the
finite-difference suite deliberately recompute quantities along separate
code paths so they can catch errors in the solver.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import Delaunay

from .densities import Discrete, GaussianVec, PoissonVec
from .estimator import AffineEstimator, evaluate_many
from .geometry import Box, Polytope, Simplex, contains, extreme_points, random_point
from .model import ProblemSpec
from .saddle import coupled_gradient, coupled_objective


class ValidationError(ValueError):
    pass


# Monte Carlo coverage


@dataclass(frozen=True)
class ProbeResult:
    state: list
    n_samples: int
    misses: int
    miss_rate: float
    mc_half_width: float


@dataclass(frozen=True)
class CoverageReport:
    probes: list
    epsilon: float
    risk: float
    seed: int
    workers: int
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def stream(seed: int, stream_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream_id,))))


def _count_misses(spec: ProblemSpec, est: AffineEstimator, x: np.ndarray, n: int, rng, batch: int = 50_000) -> int:
    truth = float(spec.g @ x)
    misses = 0
    done = 0
    while done < n:
        m = min(batch, n - done)
        samples = []
        for ch in spec.channels:
            draws = ch.family.sample_many(ch.apply(x), rng, m * ch.repetitions)
            samples.append(draws.reshape(m, ch.repetitions, *draws.shape[1:]))
        est_vals = evaluate_many(est, samples)
        # the guarantee bounds P(|g_hat - g.x| >= risk)
        misses += int(np.count_nonzero(np.abs(est_vals - truth) >= est.risk))
        done += m
    return misses


def coverage_mc(
    spec: ProblemSpec,
    est: AffineEstimator,
    probes,
    n_samples: int,
    seed: int = 0,
    workers: int = 1,
) -> CoverageReport:
    """Empirical miss rates of ``[g_hat - risk, g_hat + risk]`` at each probe state.

    Probe ``i`` split over ``workers`` uses streams ``i * workers + w``; the
    result depends only on ``seed`` and ``workers``.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be positive")
    probes = [np.asarray(p, dtype=float) for p in probes]
    for i, p in enumerate(probes):
        if p.shape != (spec.dim,) or not contains(spec.feasible_set, p, tol=1e-8):
            raise ValidationError(f"probe {i} lies outside the feasible set: {p.tolist()}")

    jobs = []
    for i, p in enumerate(probes):
        base, extra = divmod(n_samples, workers)
        for w in range(workers):
            jobs.append((i, p, base + (1 if w < extra else 0), i * workers + w))

    def run(job):
        i, p, n, sid = job
        return _count_misses(spec, est, p, n, stream(seed, sid)) if n else 0

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(run, jobs))
    else:
        counts = [run(j) for j in jobs]

    eps = spec.epsilon
    half = 3.0 * math.sqrt(eps * (1.0 - eps) / n_samples)
    results = []
    for i, p in enumerate(probes):
        misses = sum(c for (j, *_), c in zip(jobs, counts) if j == i)
        results.append(ProbeResult(p.tolist(), n_samples, misses, misses / n_samples, half))
    passed = all(r.miss_rate <= eps + r.mc_half_width for r in results)
    return CoverageReport(results, eps, est.risk, seed, workers, passed)


def default_probes(spec: ProblemSpec, est: AffineEstimator, n_random: int = 5, seed: int = 0) -> list:
    """``x*``, ``y*`` and ``n_random`` seeded random states of X."""
    prov = est.provenance
    rng = stream(seed, 10**6)
    out = [np.asarray(prov["x_star"]), np.asarray(prov["y_star"])]
    out.extend(random_point(spec.feasible_set, rng) for _ in range(n_random))
    return out


# Dual-form grid oracle


def _barycentric_grid(V: np.ndarray, k: int) -> np.ndarray:
    """Points ``sum_i (c_i / (k-1)) V_i`` over integer compositions of ``k - 1``."""
    nv = V.shape[0]
    if nv == 1:
        return V.copy()
    steps = k - 1
    if nv == 2:
        t = np.linspace(0.0, 1.0, k)
        return np.outer(1 - t, V[0]) + np.outer(t, V[1])
    combos = [c for c in itertools.product(range(steps + 1), repeat=nv - 1) if sum(c) <= steps]
    W = np.array([[*c, steps - sum(c)] for c in combos], dtype=float) / steps
    return W @ V


def state_grid(fs, points_per_dim: int) -> np.ndarray:
    if isinstance(fs, Box):
        if fs.dim > 3:
            raise ValidationError("grid oracle limited to dimension <= 3")
        axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(fs.lower, fs.upper)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, fs.dim)
    V = extreme_points(fs)
    if V.shape[0] <= 3:
        return _barycentric_grid(V, points_per_dim)
    if isinstance(fs, Simplex) or V.shape[1] > 3:
        raise ValidationError("grid oracle limited to sets with <= 3 vertices or dimension <= 3")
    lo, hi = V.min(axis=0), V.max(axis=0)
    axes = [np.linspace(a, b, points_per_dim) for a, b in zip(lo, hi)]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, V.shape[1])
    if V.shape[1] == 1:
        return G
    return G[Delaunay(V).find_simplex(G) >= 0]


def _pair_log_affinity(fam, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Matrix of ``ln AffH(P_i, Q_j)`` from the textbook formulas."""
    if isinstance(fam, Discrete):
        return np.log(np.sqrt(P) @ np.sqrt(Q).T)
    if isinstance(fam, PoissonVec):
        sp, sq = np.sqrt(P), np.sqrt(Q)
        d2 = (sp**2).sum(1)[:, None] + (sq**2).sum(1)[None, :] - 2 * sp @ sq.T
        return -0.5 * np.maximum(d2, 0.0)
    if isinstance(fam, GaussianVec):
        w = 1.0 / (8.0 * np.asarray(fam.sigmas) ** 2)
        d2 = (P**2 * w).sum(1)[:, None] + (Q**2 * w).sum(1)[None, :] - 2 * (P * w) @ Q.T
        return -np.maximum(d2, 0.0)
    raise TypeError(fam)


def dual_value_oracle(spec: ProblemSpec, r: float, grid_points_per_dim: int = 101, chunk: int = 512) -> float:
    """``max g.(x - y)`` s.t. ``sum_l R_l ln AffH_l(A_l x, A_l y) >= -r`` by grid search."""
    if grid_points_per_dim < 2:
        raise ValidationError("grid needs at least 2 points per dimension")
    G = state_grid(spec.feasible_set, grid_points_per_dim)
    gv = G @ spec.g
    params = [(ch, G @ ch.map_matrix.T + ch.map_offset) for ch in spec.channels]
    best = -np.inf
    for start in range(0, G.shape[0], chunk):
        sl = slice(start, start + chunk)
        total = np.zeros((gv[sl].shape[0], G.shape[0]))
        for ch, P in params:
            total += ch.repetitions * _pair_log_affinity(ch.family, P[sl], P)
        diff = gv[sl][:, None] - gv[None, :]
        ok = total >= -r - 1e-12
        if ok.any():
            best = max(best, float(diff[ok].max()))
    return best


# Finite differences


def _central(f, z: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h * max(1.0, abs(z[i]))
        out[i] = (f(z + e) - f(z - e)) / (2 * e[i])
    return out


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    # unit floor: a gradient that vanishes is compared absolutely
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1.0))


def finite_diff_suite(spec: ProblemSpec, n_points: int = 100, seed: int = 0, step: float = 1e-6) -> float:
    """Worst relative error of every closed-form gradient against central differences.

    Points are random states of X mapped through each channel, so they are
    interior whenever the problem validates.
    """
    rng = stream(seed, 2 * 10**6)
    fs = spec.feasible_set
    alpha = float(np.exp(rng.uniform(np.log(1e-2), np.log(1e1))))
    worst = 0.0
    for _ in range(n_points):
        x, y, z = (random_point(fs, rng) for _ in range(3))
        for ch in spec.channels:
            fam = ch.family
            mu, nu, lam = ch.apply(x), ch.apply(y), ch.apply(z)
            gmu, gnu = fam.log_affinity_grad(mu, nu)
            worst = max(worst, _rel(gmu, _central(lambda m: math.log(fam.affinity(m, nu)), mu, step)))
            worst = max(worst, _rel(gnu, _central(lambda n: math.log(fam.affinity(mu, n)), nu, step)))
            gl = fam.tilted_affinity_grad(lam, mu, nu)
            worst = max(worst, _rel(gl, _central(lambda l: fam.tilted_affinity_log(l, mu, nu), lam, step)))
        gx, gy = coupled_gradient(spec, alpha, x, y)
        worst = max(worst, _rel(gx, _central(lambda u: coupled_objective(spec, alpha, u, y), x, step)))
        worst = max(worst, _rel(gy, _central(lambda u: coupled_objective(spec, alpha, x, u), y, step)))
    return worst


# Consistency of a built estimator


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    residual: float
    tolerance: float


def consistency_suite(spec: ProblemSpec, est: AffineEstimator) -> list[CheckResult]:
    prov = est.provenance
    x = np.asarray(prov["x_star"])
    y = np.asarray(prov["y_star"])
    cert_gaps = sum(prov["certification_gaps"])
    fw = prov["inner_fw_gap"]
    out = []

    for li, (ch, ech) in enumerate(zip(spec.channels, est.channels)):
        fam = ch.family
        mu, nu = ech.mu_star, ech.nu_star
        ref = math.log(fam.affinity(mu, nu))
        res = max(
            abs(fam.tilted_affinity_log(mu, mu, nu) - ref),
            abs(fam.tilted_affinity_log(nu, nu, mu) - ref),
        )
        out.append(CheckResult(f"equal_integrals[{li}]", res <= 1e-12, res, 1e-12))

        # same identity against the parameters implied by (x*, y*)
        mx, my = ch.apply(x), ch.apply(y)
        ref_state = math.log(fam.affinity(mx, my))
        res = max(
            abs(fam.tilted_affinity_log(mx, mu, nu) - ref_state),
            abs(fam.tilted_affinity_log(my, nu, mu) - ref_state),
        )
        tol = 1e-10 * (1.0 + abs(ref_state))
        out.append(CheckResult(f"equal_integrals_at_state[{li}]", res <= tol, res, tol))

        inside = True
        try:
            fam.check(mu)
            fam.check(nu, "nu")
        except ValueError:
            inside = False
        out.append(CheckResult(f"parameters_in_domain[{li}]", inside, 0.0 if inside else 1.0, 0.0))

    c_closed = 0.5 * float(spec.g @ x + spec.g @ y)
    c_cert = prov["certified_constant"]
    res = abs(c_cert - c_closed)
    tol = 0.5 * (fw + cert_gaps) + 1e-10 * (1.0 + abs(c_closed))
    out.append(CheckResult("constant_identity", res <= tol, res, tol))

    half_lo, half_hi = prov["psi_lower"] / 2, prov["psi_upper"] / 2
    slack = cert_gaps / 2 + abs(est.constant_c - c_cert) + 1e-10 * (1.0 + abs(half_hi))
    res = max(est.risk - half_hi, half_lo - est.risk, 0.0)
    out.append(CheckResult("risk_matches_psi", est.risk >= half_lo - 1e-10 and est.risk - half_hi <= slack, res, slack))

    floor = est.alpha * math.log(2.0 / est.epsilon)
    res = max(floor - est.risk, 0.0)
    out.append(CheckResult("risk_above_alpha_r", est.risk >= floor * (1 - 1e-12), res, 0.0))
    return out
