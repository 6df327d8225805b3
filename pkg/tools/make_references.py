"""Regenerate ``data/references.json`` from tight-tolerance runs of the solver.

Each entry is cross-checked between two orders; ``--scipy`` additionally
reports agreement with scipy's Radau (needs scipy).
"""
import argparse
import json
import math
from pathlib import Path

import numpy as np

from blended_gbdf import problems

OUT = Path(problems.__file__).parent / "data" / "references.json"
# name -> (rtol, atol)
SETTINGS = {
    "robertson": (1e-12, 1e-18),
    "pollution": (1e-12, 1e-18),
    "vanderpol": (1e-10, 1e-12),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", default=list(SETTINGS))
    ap.add_argument("--scipy", action="store_true")
    args = ap.parse_args(argv)
    doc = json.loads(OUT.read_text()) if OUT.exists() else {}
    for name in args.names:
        prob = problems.builtin(name)
        rtol, atol = SETTINGS[name]
        t = prob.t_span[1]
        try:
            y, src = problems.generate_reference(prob, rtol=rtol, atol=atol)
        except problems.NoReference as exc:
            print(f"{name}: skipped ({exc})")
            continue
        if args.scipy:
            from scipy.integrate import solve_ivp

            sol = solve_ivp(prob.f, prob.t_span, prob.y0, method="Radau", jac=prob.jac,
                            rtol=1e-13, atol=atol)
            agree = problems.scd(y, sol.y[:, -1], atol * 1e2)
            src += f"; Radau rtol=1e-13 agrees to {agree:.1f} digits"
        doc.setdefault(name, {})[format(t, ".17g")] = {"y": [float(v) for v in y], "source": src}
        print(f"{name} t={t:g}: {src}")
    OUT.write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
