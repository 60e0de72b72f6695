"""Risk of the certified estimator as epsilon and the repetition count vary.

Writes one CSV per shipped problem, with columns ``problem,vary,value,risk,alpha_star``.
"""

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from affine_minimax import parse_problem
from affine_minimax.estimator import solve

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("problems", nargs="*", default=sorted(str(f) for f in (ROOT / "problems").glob("*.json")))
    p.add_argument("--epsilons", default="0.01,0.02,0.05,0.1,0.2")
    p.add_argument("--repetitions", default="1,3,10,30,100")
    p.add_argument("-o", "--output", help="CSV path (default stdout)")
    args = p.parse_args(argv)

    out = open(args.output, "w", newline="") if args.output else sys.stdout
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["problem", "vary", "value", "risk", "alpha_star"])
    for path in args.problems:
        spec = parse_problem(Path(path).read_text())
        name = Path(path).stem
        for eps in (float(v) for v in args.epsilons.split(",")):
            est = solve(spec.with_(epsilon=eps))
            writer.writerow([name, "epsilon", eps, repr(est.risk), repr(est.alpha)])
        for reps in (int(v) for v in args.repetitions.split(",")):
            channels = tuple(replace(ch, repetitions=reps) for ch in spec.channels)
            est = solve(spec.with_(channels=channels))
            writer.writerow([name, "repetitions", reps, repr(est.risk), repr(est.alpha)])
        out.flush()
    if args.output:
        out.close()


if __name__ == "__main__":
    main()
