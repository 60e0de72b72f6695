"""Command-line front end: ``solve``, ``estimate``, ``validate``, ``sweep``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .densities import DomainError
from .estimator import (
    EstimatorFormatError,
    ObservationError,
    build,
    deserialize,
    evaluate,
    parse_observations,
    report,
    serialize,
    solve,
)
from .frankwolfe import LineSearchError
from .model import ProblemSpec, SpecError, check_epsilon, parse_problem, validate_problem
from .saddle import minimize_alpha
from .validate import ValidationError, coverage_mc, default_probes

logger = logging.getLogger("affine_minimax")

EXIT_OK, EXIT_WARN, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _write(path: str, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror or exc}") from None


def load_problem(path: str, args) -> ProblemSpec:
    allow = getattr(args, "allow_large_epsilon", False)
    spec = parse_problem(_read(path), allow_large_epsilon=allow)
    overrides = {}
    if getattr(args, "epsilon", None) is not None:
        check_epsilon(args.epsilon, allow)
        overrides["epsilon"] = args.epsilon
    if getattr(args, "delta", None) is not None:
        if not args.delta > 0:
            raise SpecError("delta", "delta must be > 0")
        overrides["delta"] = args.delta
    solver = {}
    for flag, name in (("seed", "seed"), ("tol_inner", "tol_inner"), ("tol_alpha", "tol_alpha"), ("constant_mode", "constant_mode")):
        v = getattr(args, flag, None)
        if v is not None:
            solver[name] = v
    if solver:
        overrides["solver"] = replace(spec.solver, **solver)
    if overrides:
        spec = spec.with_(**overrides)
    violations = validate_problem(spec)
    if violations:
        raise SpecError("", "problem fails domain validation:\n  " + "\n  ".join(map(str, violations)))
    return spec


def cmd_solve(args) -> int:
    spec = load_problem(args.problem, args)
    est = solve(spec)
    if args.output:
        _write(args.output, serialize(est) + "\n")
    print(report(est))
    if args.strict and "precision not met" in est.provenance["flags"]:
        return EXIT_WARN
    return EXIT_OK


def cmd_estimate(args) -> int:
    est = deserialize(_read(args.estimator))
    try:
        obs = parse_observations(json.loads(_read(args.observations)))
    except json.JSONDecodeError as exc:
        raise ObservationError(f"malformed observation JSON: {exc}") from None
    value = evaluate(est, obs)
    print(f"estimate : {value!r}")
    print(f"interval : [{value - est.risk!r}, {value + est.risk!r}]")
    print(f"epsilon  : {est.epsilon!r}")
    return EXIT_OK


def cmd_validate(args) -> int:
    est = deserialize(_read(args.estimator))
    spec = load_problem(args.problem, args).with_(epsilon=est.epsilon)
    if len(spec.channels) != len(est.channels):
        raise InputError("estimator and problem have different channel counts")
    seed = spec.solver.seed if args.seed is None else args.seed
    if args.probes:
        try:
            probes = [np.asarray(p, dtype=float) for p in json.loads(_read(args.probes))]
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise InputError(f"probes file must be a JSON list of states: {exc}") from None
    else:
        probes = default_probes(spec, est, n_random=args.n_random, seed=seed)
    rep = coverage_mc(spec, est, probes, args.n_samples, seed=seed, workers=args.workers)
    text = json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.output:
        _write(args.output, text)
    for i, p in enumerate(rep.probes):
        ok = p.miss_rate <= rep.epsilon + p.mc_half_width
        print(f"probe {i}: miss_rate={p.miss_rate!r} bound={rep.epsilon + p.mc_half_width!r} {'ok' if ok else 'FAIL'}")
    print(f"coverage {'PASS' if rep.passed else 'FAIL'} (risk={rep.risk!r}, epsilon={rep.epsilon!r})")
    return EXIT_OK if rep.passed else EXIT_WARN


def _parse_values(text: str, vary: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"--values must be comma-separated numbers, got {text!r}") from None
    if not vals:
        raise InputError("--values is empty")
    if vary == "repetitions":
        if any(v != int(v) or v < 1 for v in vals):
            raise InputError("repetitions values must be positive integers")
        return [int(v) for v in vals]
    return vals


def cmd_sweep(args) -> int:
    spec = load_problem(args.problem, args)
    values = _parse_values(args.values, args.vary)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["value", "risk", "alpha_star", "psi_upper", "psi_lower"])
    warn = False
    for v in values:
        if args.vary == "epsilon":
            check_epsilon(v, args.allow_large_epsilon)
            s = spec.with_(epsilon=v)
        else:
            s = spec.with_(channels=tuple(replace(ch, repetitions=v) for ch in spec.channels))
        saddle = minimize_alpha(s)
        est = build(s, saddle)
        warn |= not saddle.precision_met
        writer.writerow([repr(v), repr(est.risk), repr(saddle.alpha_star), repr(saddle.psi_upper), repr(saddle.psi_lower)])
    if args.output:
        _write(args.output, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_WARN if (args.strict and warn) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--epsilon", type=float, help="override confidence parameter")
    common.add_argument("--delta", type=float, help="override requested precision")
    common.add_argument("--seed", type=int)
    common.add_argument("--tol-inner", type=float, dest="tol_inner")
    common.add_argument("--tol-alpha", type=float, dest="tol_alpha")
    common.add_argument("--strict", action="store_true", help="exit 1 when the requested precision is not met")
    common.add_argument("--constant-mode", choices=["certified", "closed-form"], dest="constant_mode")
    common.add_argument("--allow-large-epsilon", action="store_true", help="accept epsilon in (0, 1)")

    p = argparse.ArgumentParser(prog="affine-minimax", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="build an estimator from a problem file")
    s.add_argument("problem")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("estimate", help="apply an estimator to observations")
    e.add_argument("estimator")
    e.add_argument("observations")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("validate", parents=[common], help="Monte Carlo coverage check")
    v.add_argument("problem")
    v.add_argument("estimator")
    v.add_argument("--probes", help="JSON list of states (default: x*, y* and random states)")
    v.add_argument("--n-random", type=int, default=5, dest="n_random")
    v.add_argument("--n-samples", type=int, default=200_000, dest="n_samples")
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("-o", "--output")
    v.set_defaults(func=cmd_validate)

    w = sub.add_parser("sweep", parents=[common], help="risk as a function of epsilon or repetitions")
    w.add_argument("problem")
    w.add_argument("--vary", choices=["epsilon", "repetitions"], required=True)
    w.add_argument("--values", required=True, help="comma-separated list")
    w.add_argument("-o", "--output")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
    except SpecError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
    except (EstimatorFormatError, ObservationError, DomainError, ValidationError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
    except LineSearchError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
