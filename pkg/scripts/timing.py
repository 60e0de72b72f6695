"""Wall-clock time of the saddle solve on each shipped problem."""

import argparse
import time
from pathlib import Path

from affine_minimax import parse_problem
from affine_minimax.saddle import minimize_alpha

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    for path in sorted((ROOT / "problems").glob("*.json")):
        spec = parse_problem(path.read_text())
        times = []
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            sol = minimize_alpha(spec)
            times.append(time.perf_counter() - t0)
        print(
            f"{path.stem:16s} best={min(times):.3f} s  evals={len(sol.trace)}  "
            f"delta={sol.delta_solver:.2e}  flags={sol.flags}"
        )


if __name__ == "__main__":
    main()
