"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

import argparse
import json
import sys
import timeit

import numpy as np

from gridy import kernels
from gridy.simulation import factor_correlation, solve_stationary_transition


def cases():
    rng = np.random.default_rng(0)
    qs = rng.uniform(0.0, 1.0, size=200)
    psi = solve_stationary_transition(factor_correlation(4, 1), 0.2)
    innov = rng.standard_normal((5000, 4))
    x0 = np.zeros(4)
    return {
        "mp_quantile (200 levels, beta=0.5)": lambda k: k.mp_quantile(0.5, qs),
        "mp_cdf (grid of 2000 points)": lambda k: [k.mp_cdf(x, 0.25) for x in np.linspace(0.2, 2.3, 2000)],
        "var1_simulate (T=5000, r=4)": lambda k: k.var1_simulate(psi, innov, x0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats, best is reported (default 5)")
    ap.add_argument("--json", default=None, help="also write results as JSON")
    args = ap.parse_args(argv)

    backends = {"python": kernels.load_backend("python")}
    if kernels.compiled_available():
        backends["compiled"] = kernels.load_backend("compiled")
    else:
        print("compiled backend not built; timing the Python fallback only", file=sys.stderr)

    results = []
    for name, fn in cases().items():
        row = {"case": name}
        for bname, mod in backends.items():
            t = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
            row[bname] = t
        if "compiled" in row:
            row["speedup"] = row["python"] / row["compiled"]
        results.append(row)
        extra = f"  compiled {row['compiled'] * 1e3:9.3f} ms  speedup {row['speedup']:7.1f}x" if "compiled" in row else ""
        print(f"{name:40s} python {row['python'] * 1e3:9.3f} ms{extra}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
