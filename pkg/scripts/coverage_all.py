"""Monte Carlo coverage of every shipped problem at x*, y* and random states."""

import argparse
import json
import time
from pathlib import Path

from affine_minimax import parse_problem
from affine_minimax.estimator import solve
from affine_minimax.validate import coverage_mc, default_probes

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--n-samples", type=int, default=200_000)
    p.add_argument("--n-random", type=int, default=5)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="write all reports as one JSON document")
    args = p.parse_args(argv)

    reports = {}
    failed = False
    for path in sorted((ROOT / "problems").glob("*.json")):
        t0 = time.perf_counter()
        spec = parse_problem(path.read_text()).with_(epsilon=args.epsilon)
        est = solve(spec)
        probes = default_probes(spec, est, n_random=args.n_random, seed=args.seed)
        rep = coverage_mc(spec, est, probes, args.n_samples, seed=args.seed, workers=args.workers)
        worst = max(pr.miss_rate for pr in rep.probes)
        failed |= not rep.passed
        print(
            f"{path.stem:16s} risk={est.risk:.4f} worst_miss={worst:.4f} "
            f"{'PASS' if rep.passed else 'FAIL'} ({time.perf_counter() - t0:.1f} s)"
        )
        reports[path.stem] = rep.to_dict()
    if args.output:
        Path(args.output).write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
