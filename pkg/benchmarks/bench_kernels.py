"""Compiled vs pure-Python kernels: LU, eigenvalues and a stability-radius scan.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both backends must agree to 1e-10; the script reports best-of-``repeat``
wall times and the speedup.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from blended_gbdf import _kernels_py, linalg
from blended_gbdf.construction import catalogue_method

try:
    from blended_gbdf import _kernels as _compiled
except ImportError:
    _compiled = None


def _ordered(w):
    # conjugate pairs may differ in the last bits of the real part between backends
    return w[np.lexsort((w.imag, np.round(w.real, 10)))]


def cases(rng):
    a = rng.normal(size=(11, 11))
    b = rng.normal(size=(11, 4))
    t16 = catalogue_method(16)
    x = np.linspace(-20.0, 20.0, 40)
    qs = x[None, :] + 1j * x[:, None]
    return {
        "lu_factor+solve n=11": lambda be: linalg.solve(linalg.lu_factor(a, backend=be), b, backend=be),
        "eigenvalues n=11": lambda be: _ordered(linalg.eigenvalues(a, backend=be)),
        "stability_radii k=16, 1600 q": lambda be: linalg.stability_radii(t16.A, t16.U, qs, backend=be),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="write timings as JSON")
    args = p.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':34s} {'compiled':>12s} {'python':>12s} {'speedup':>9s}")
    for name, fn in cases(rng).items():
        ref, got = fn(_kernels_py), fn(_compiled)
        if not np.allclose(ref, got, rtol=1e-10, atol=1e-10):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        times = {}
        for label, be in (("compiled", _compiled), ("python", _kernels_py)):
            n, total = timeit.Timer(lambda: fn(be)).autorange()
            best = min(timeit.repeat(lambda: fn(be), number=n, repeat=args.repeat)) / n
            times[label] = best
        rows.append({"kernel": name, **times, "speedup": times["python"] / times["compiled"]})
        print(f"{name:34s} {times['compiled'] * 1e3:10.3f}ms {times['python'] * 1e3:10.3f}ms "
              f"{rows[-1]['speedup']:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
