"""Acceptance criteria, one test each.

Every test prints a single ``criterion N PASS/FAIL`` line (visible even under
output capture) and fails when its check or its runtime budget fails.
"""

import math
import time

import numpy as np
import pytest

from affine_minimax import cli
from affine_minimax.densities import Discrete, GaussianVec, PoissonVec, affinity_oracle
from affine_minimax.estimator import certify, report, simple_constant, solve
from affine_minimax.model import ChannelModel
from affine_minimax.saddle import minimize_alpha, psi
from affine_minimax.validate import coverage_mc, default_probes, finite_diff_suite

from conftest import PROBLEMS, SHIPPED, load, singleton, two_point

pytestmark = pytest.mark.slow


def run_criterion(capsys, number, title, check, budget=None):
    t0 = time.perf_counter()
    error = None
    try:
        detail = check()
    except AssertionError as exc:
        error, detail = exc, str(exc).splitlines()[0] if str(exc) else "assertion failed"
    elapsed = time.perf_counter() - t0
    over = budget is not None and elapsed > budget
    ok = error is None and not over
    note = f"{detail}; " if detail else ""
    if over:
        note += f"over budget {budget:g} s; "
    with capsys.disabled():
        print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({note}{elapsed:.2f} s)")
    if error is not None:
        raise error
    assert not over, f"criterion {number} took {elapsed:.2f} s, budget {budget} s"


def segment_dual_grid(repetitions, eps=0.05, n=2001):
    """Largest ``t_x - t_y`` over a grid of the benchmark segment subject to the affinity constraint."""
    t = np.linspace(0.2, 0.8, n)
    tx, ty = t[:, None], t[None, :]
    aff = np.sqrt(tx * ty) + np.sqrt((1 - tx) * (1 - ty))
    ok = repetitions * np.log(aff) >= math.log(eps / 2)
    return float(np.max(np.where(ok, tx - ty, -np.inf)))


def with_repetitions(spec, reps):
    return spec.with_(channels=tuple(ChannelModel(c.family, c.map_matrix, c.map_offset, reps) for c in spec.channels))


def slack_of(est):
    p = est.provenance
    return sum(p["certification_gaps"]) + p["inner_fw_gap"] + p["delta_achieved"]


def test_criterion_01_saddle_value(capsys):
    def check():
        errs = []
        for reps, ref in ((1, 0.6), (10, segment_dual_grid(10)), (100, segment_dual_grid(100))):
            value = 2 * solve(two_point(reps)).risk
            errs.append(abs(value - ref))
            assert errs[-1] <= 1e-3, f"R={reps}: 2*risk={value} vs {ref}"
        return f"max error {max(errs):.2e}"

    run_criterion(capsys, 1, "two-point saddle value against the grid oracle", check, budget=5.0)


def random_pairs(rng):
    for _ in range(100):
        n = int(rng.integers(2, 7))
        yield Discrete(n), rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    for _ in range(100):
        d = int(rng.integers(1, 4))
        yield PoissonVec(d), rng.uniform(0.05, 30.0, d), rng.uniform(0.05, 30.0, d)
    for _ in range(100):
        d = int(rng.integers(1, 4))
        fam = GaussianVec(d, tuple(rng.uniform(0.3, 3.0, d)))
        yield fam, rng.uniform(-3.0, 3.0, d), rng.uniform(-3.0, 3.0, d)


def test_criterion_02_closed_form_affinities(capsys):
    def check():
        worst = 0.0
        for fam, mu, nu in random_pairs(np.random.default_rng(2)):
            rel = abs(affinity_oracle(fam, mu, nu) / fam.affinity(mu, nu) - 1.0)
            worst = max(worst, rel)
            assert rel <= 1e-9, f"{type(fam).__name__} rel error {rel:.3e}"
        return f"worst rel error {worst:.2e} over 300 pairs"

    run_criterion(capsys, 2, "closed-form affinities against summation and quadrature", check, budget=10.0)


def test_criterion_03_gradient_suite(capsys):
    def check():
        worst = max(finite_diff_suite(load(name), n_points=100) for name in SHIPPED)
        assert worst <= 1e-5, f"worst relative error {worst:.3e}"
        return f"worst rel error {worst:.2e}"

    run_criterion(capsys, 3, "gradients against central differences", check, budget=10.0)


def test_criterion_04_coverage(capsys):
    def check():
        worst = 0.0
        for name in SHIPPED:
            spec = load(name, epsilon=0.1)
            est = solve(spec)
            probes = default_probes(spec, est, n_random=5, seed=spec.solver.seed)
            rep = coverage_mc(spec, est, probes, 200_000, seed=spec.solver.seed, workers=4)
            bound = 0.1 + 3 * math.sqrt(0.1 * 0.9 / 200_000)
            rates = [p.miss_rate for p in rep.probes]
            worst = max(worst, max(rates))
            assert len(rates) == 7 and max(rates) <= bound, f"{name}: miss rates {rates}"
        return f"worst miss rate {worst:.4f}"

    run_criterion(capsys, 4, "Monte Carlo coverage on shipped problems at epsilon 0.1", check, budget=120.0)


def test_criterion_05_constant_identity(capsys):
    def check():
        spec = two_point(tol_inner=1e-9)
        saddle = minimize_alpha(spec)
        c = certify(spec, saddle).c
        diff = abs(c - simple_constant(spec, saddle))
        assert diff <= 1e-4 * (1 + abs(c)), f"difference {diff:.3e}"
        return f"difference {diff:.2e}"

    run_criterion(capsys, 5, "certified constant equals the closed-form constant", check, budget=10.0)


def test_criterion_06_structure(capsys):
    def check():
        # epsilon
        lo_eps, hi_eps = solve(two_point(10, epsilon=0.01)), solve(two_point(10, epsilon=0.1))
        assert lo_eps.risk >= hi_eps.risk - slack_of(lo_eps) - slack_of(hi_eps), "risk not monotone in epsilon"
        # repetitions
        for name in ("two_point", "poisson", "product"):
            base = two_point() if name == "two_point" else load(name)
            ests = [solve(with_repetitions(base, reps)) for reps in (1, 10, 100)]
            for a, b in zip(ests, ests[1:]):
                assert b.risk <= a.risk + slack_of(a) + slack_of(b), f"{name}: risk grows with repetitions"
        # g -> -g
        for name in SHIPPED:
            spec = load(name)
            a, b = solve(spec), solve(spec.with_(g=-spec.g))
            assert abs(a.risk - b.risk) <= 2 * (slack_of(a) + slack_of(b)) + 1e-12, f"{name}: sign flip changes risk"
        # three-point convexity on consecutive log-spaced alphas
        alphas = np.geomspace(1e-3, 1e2, 22)
        for name in SHIPPED:
            spec = two_point(100) if name == "two_point" else load(name)
            vals = [psi(spec, a) for a in alphas]
            for k in range(20):
                (l1, h1, _), (l2, h2, _), (l3, h3, _) = vals[k : k + 3]
                a1, a2, a3 = alphas[k : k + 3]
                w = (a3 - a2) / (a3 - a1)
                slack = (h1 - l1) + (h2 - l2) + (h3 - l3)
                assert l2 <= w * h1 + (1 - w) * h3 + 2 * slack + 1e-12, f"{name}: convexity fails at alpha={a2:g}"
        return ""

    run_criterion(capsys, 6, "monotonicity, sign symmetry and convexity", check)


def test_criterion_07_equal_integrals(capsys):
    def check():
        worst = 0.0
        specs = [load(name) for name in SHIPPED] + [two_point(10), two_point(100), load("poisson", epsilon=0.1)]
        for spec in specs:
            for ch in solve(spec).channels:
                ref = math.log(ch.family.affinity(ch.mu_star, ch.nu_star))
                for lam, a, b in ((ch.mu_star, ch.mu_star, ch.nu_star), (ch.nu_star, ch.nu_star, ch.mu_star)):
                    worst = max(worst, abs(ch.family.tilted_affinity_log(lam, a, b) - ref))
        assert worst <= 1e-12, f"residual {worst:.3e}"
        return f"worst residual {worst:.2e}"

    run_criterion(capsys, 7, "equal-integrals identity on built estimators", check)


def test_criterion_08_singleton(capsys):
    def check():
        spec = singleton()
        est = solve(spec)
        ch = est.channels[0]
        assert np.array_equal(ch.mu_star, ch.nu_star), "estimator is not constant"
        floor = spec.solver.alpha_min * math.log(2 / spec.epsilon)
        assert floor <= est.risk <= floor + slack_of(est) + 1e-15, f"risk {est.risk}"
        assert "alpha bound active" in est.provenance["flags"]
        rep = coverage_mc(spec, est, [np.array([0.3, 0.7])], 200_000, seed=0)
        assert rep.probes[0].misses == 0, f"{rep.probes[0].misses} misses"
        return f"risk {est.risk:.3e}, 0 misses"

    run_criterion(capsys, 8, "singleton state set", check)


def test_criterion_09_determinism(tmp_path, capsys):
    def once(k):
        est, cov = tmp_path / f"est{k}.json", tmp_path / f"cov{k}.json"
        problem = str(PROBLEMS / "product.json")
        codes = (
            cli.main(["solve", problem, "--seed", "7", "-o", str(est)]),
            cli.main(["validate", problem, str(est), "--seed", "7", "--workers", "3", "--n-samples", "50000", "-o", str(cov)]),
        )
        out = capsys.readouterr().out
        return codes, out, est.read_bytes(), cov.read_bytes()

    def check():
        first, second = once(0), once(1)
        assert first[0] == (0, 0), f"exit codes {first[0]}"
        assert first == second, "outputs differ between runs"
        return ""

    run_criterion(capsys, 9, "solve and validate are byte-identical across runs", check)


def test_criterion_10_near_optimality_factor(capsys):
    def check():
        text = str(report(solve(two_point())))
        line = next(ln for ln in text.splitlines() if ln.startswith("near-optimality factor"))
        printed = float(line.split(":", 1)[1])
        expected = 2 + math.log(64) / math.log(5)
        assert abs(printed - expected) <= 1e-12, f"printed {printed!r}, expected {expected!r}"
        return f"printed {printed!r}"

    run_criterion(capsys, 10, "near-optimality factor at epsilon 0.05", check)
