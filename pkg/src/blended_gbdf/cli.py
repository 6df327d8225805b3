"""Command-line interface: ``blended-gbdf {tabulate,analyze,locus,solve,wp}``.

Exit codes: 0 success, 1 internal error or failed verification, 2 invalid
configuration, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import numpy as np

from . import __version__
from .analysis import boundary_locus, check_stability
from .blended import convergence_params
from .construction import CATALOGUE, InvalidTriple, assemble_glm
from .problems import (
    NoReference,
    ParseError,
    UnknownProblem,
    ValidationError,
    builtin,
    ingest,
    reference_solution,
    scd,
)
from .solver import MethodNotEligible, SolverOptions, integrate

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
TABLE_TOL = 5e-5
DEFAULT_TOLS = "1e-4,1e-5,1e-6,1e-7,1e-8,1e-9,1e-10"


class ConfigError(Exception):
    pass


class SolverFailure(Exception):
    pass


def _choice(s: str) -> str:
    s = str(s).lower()
    if s in ("1", "choice1"):
        return "choice1"
    if s in ("2", "choice2"):
        return "choice2"
    if s == "both":
        return "both"
    raise argparse.ArgumentTypeError(f"choice must be 1, 2 or both, not {s!r}")


def _float_list(s: str) -> list:
    try:
        vals = [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {s!r}") from None
    return vals


def _int_list(s: str) -> list:
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {s!r}") from None


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _triple(args):
    if args.r is None or args.ell is None:
        if args.k not in CATALOGUE:
            raise ConfigError(f"k={args.k} is not in the catalogue; give --r and --ell")
        return (args.k,) + CATALOGUE[args.k]
    return args.k, args.r, args.ell


# ----------------------------------------------------------------- tabulate

def cmd_tabulate(args) -> int:
    k, r, ell = _triple(args)
    gamma = "optimal" if args.gamma is None else args.gamma
    t = assemble_glm(k, r, ell, args.choice, gamma=gamma)
    np.set_printoptions(precision=15, linewidth=200, suppress=False)
    print(f"method {t.label}  nu={t.nu}  gamma={t.gamma!r}")
    print("c =", np.array2string(t.c, precision=15, separator=", "))
    for name in ("A1", "A2", "A", "U"):
        print(f"{name} =")
        for row in getattr(t, name):
            print("  " + "  ".join(f"{v: .15g}" for v in row))
    if args.out:
        _write(args.out, t.to_json())
    return EXIT_OK


# ----------------------------------------------------------------- analyze

def _tables() -> dict:
    text = resources.files(__package__).joinpath("data", "tables.json").read_text()
    doc = json.loads(text)
    return {ch: {row[0]: row for row in doc[ch]} for ch in ("choice1", "choice2")}


def cmd_analyze(args) -> int:
    if args.catalogue:
        ks = sorted(CATALOGUE)
    elif args.k:
        ks = args.k
    else:
        raise ConfigError("nothing to analyze: give --catalogue or --k")
    choices = ["choice1", "choice2"] if args.choice == "both" else [args.choice]
    ref = _tables() if args.check else None
    buf = []
    header = ["k", "r", "r_minus_ell", "choice", "gamma", "rho_tilde", "rho_inf", "rho_star", "gamma_star"]
    reports = []
    bad = []
    for ch in choices:
        for k in ks:
            if args.r is not None and args.ell is not None and not args.catalogue:
                r, ell = args.r, args.ell
            elif k in CATALOGUE:
                r, ell = CATALOGUE[k]
            else:
                raise ConfigError(f"k={k} is not in the catalogue; give --r and --ell")
            t = assemble_glm(k, r, ell, ch)
            p = convergence_params(t.A, t.gamma)
            vals = [p.gamma, p.rho_tilde, p.rho_inf, p.rho_star, p.gamma_star]
            buf.append([k, r, r - ell, ch] + [f"{v:.{args.digits}f}" for v in vals])
            rep = check_stability(t)
            reports.append(rep)
            if not rep.l_stable:
                bad.append(f"{t.label}: not L-stable (max |R(ix)| = {rep.max_imag_axis_radius:.6g})")
            if p.rho_star > 1.0:
                bad.append(f"{t.label}: iteration not L-convergent (rho* = {p.rho_star:.4f})")
            if ref is not None and k in ref[ch]:
                printed = ref[ch][k][3:]
                for name, a, b in zip(("gamma", "rho_tilde", "rho_inf", "rho_star"), vals, printed):
                    if abs(a - b) > TABLE_TOL:
                        bad.append(f"{t.label}: {name} = {a:.7f} vs tabulated {b:.4f} (diff {abs(a - b):.2e})")
    out = [",".join(header)] + [",".join(str(v) for v in row) for row in buf]
    _write(args.out, "\n".join(out) + "\n")
    if args.stability_out:
        _write(args.stability_out, json.dumps([json.loads(r.to_json()) for r in reports], indent=2) + "\n")
    for msg in bad:
        print("FAIL", msg, file=sys.stderr)
    return EXIT_INTERNAL if bad else EXIT_OK


# ----------------------------------------------------------------- locus

def cmd_locus(args) -> int:
    k, r, ell = _triple(args)
    t = assemble_glm(k, r, ell, args.choice)
    re0, re1, im0, im1 = args.window
    if not (re1 > re0 and im1 > im0):
        raise ConfigError("window must be RE0 RE1 IM0 IM1 with RE1 > RE0 and IM1 > IM0")
    if args.res < 2:
        raise ConfigError("--res must be at least 2")
    data = boundary_locus(t, (re0, re1), (im0, im1), args.res)
    if args.out:
        _write(args.out + ".grid.csv", data.grid_csv())
        _write(args.out + ".contour.csv", data.contour_csv())
        pts = data.contour_points()
        lo = pts[:, 0].min() if len(pts) else math.nan
        print(f"{t.label}: {len(data.segments)} contour segment(s), {len(pts)} points, min Re = {lo:.3g}")
    else:
        _write(None, data.contour_csv())
    return EXIT_OK


# ----------------------------------------------------------------- solve

def _problem(args):
    if args.file:
        return ingest(args.file)
    return builtin(args.problem)


def _reference(problem):
    try:
        return reference_solution(problem, with_source=True)
    except NoReference:
        return None, None


def cmd_solve(args) -> int:
    prob = _problem(args)
    t_eval = tuple(args.t_eval) if args.t_eval else None
    opts = SolverOptions(k=args.k, r=args.r, ell=args.ell, choice=args.choice, rtol=args.rtol,
                         atol=args.atol, h0=args.h0, fixed_h=args.fixed_h, t_eval=t_eval)
    res = integrate(prob, opts)
    doc = json.loads(res.to_json())
    doc["problem"] = prob.name
    ref, src = _reference(prob)
    if ref is not None:
        atol = args.atol if args.atol is not None else prob.atol
        doc["scd"] = scd(res.y[-1], ref, atol)
        doc["reference"] = src
    if args.out:
        _write(args.out, json.dumps(doc, indent=1) + "\n")
    s = res.stats
    line = (f"{prob.name} {res.method}: {'ok' if res.success else 'FAILED'} t={res.t[-1]:.6g} "
            f"steps={s.steps} rejected={s.rejected} sweeps={s.nsweeps} nlu={s.nlu} cost={s.cost:.4g}")
    if "scd" in doc:
        line += f" scd={doc['scd']:.2f}"
    print(line)
    if not res.success:
        print(res.message, file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# ----------------------------------------------------------------- wp

WP_FIELDS = ["problem", "k", "r", "ell", "choice", "rtol", "atol", "scd", "cost", "wall_time",
             "steps", "rejected", "success"]


def _wp_run(prob, ref, k, choice, tol, atol):
    opts = SolverOptions(k=k, choice=choice, rtol=tol, atol=atol)
    try:
        res = integrate(prob, opts)
    except (InvalidTriple, ValueError):
        raise
    except Exception as exc:  # a crashed run is recorded, not fatal
        return {"success": False, "scd": math.nan, "cost": math.nan, "wall_time": math.nan,
                "steps": 0, "rejected": 0, "message": str(exc)}
    ok = res.success and abs(res.t[-1] - prob.t_span[1]) <= 1e-9 * abs(prob.t_span[1] - prob.t_span[0])
    return {"success": ok, "scd": scd(res.y[-1], ref, atol) if ok else math.nan,
            "cost": res.stats.cost, "wall_time": res.wall_time, "steps": res.stats.steps,
            "rejected": res.stats.rejected}


def monotonicity(scds) -> float:
    """Fraction of consecutive tolerance steps (tight-ward) where scd increased."""
    pairs = [(a, b) for a, b in zip(scds, scds[1:])]
    if not pairs:
        return math.nan
    return sum(1 for a, b in pairs if b > a) / len(pairs)


def cmd_wp(args) -> int:
    if not args.tol_list:
        raise ConfigError("empty --tol-list")
    if not args.k_list:
        raise ConfigError("empty --k-list")
    prob = _problem(args)
    ref, src = _reference(prob)
    if ref is None:
        raise ConfigError(f"no reference solution for {prob.name!r}")
    tols = sorted(args.tol_list, reverse=True)
    ratio = args.atol_ratio if args.atol_ratio is not None else prob.atol / prob.rtol
    threads = max(1, int(os.environ.get("BLENDED_GBDF_THREADS", "1") or 1))
    jobs = [(k, tol) for k in args.k_list for tol in tols]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futs = [pool.submit(_wp_run, prob, ref, k, args.choice, tol, tol * ratio) for k, tol in jobs]
        results = [f.result() for f in futs]
    rows = []
    for (k, tol), rec in zip(jobs, results):
        r, ell = CATALOGUE[k]
        rows.append({"problem": prob.name, "k": k, "r": r, "ell": ell, "choice": args.choice,
                     "rtol": tol, "atol": tol * ratio, **rec})
    lines = [",".join(WP_FIELDS)]
    for row in rows:
        lines.append(",".join(
            f"{row[f]:.6g}" if isinstance(row[f], float) else str(row[f]) for f in WP_FIELDS))
    _write(args.out, "\n".join(lines) + "\n")
    worst = 1.0
    for k in args.k_list:
        seq = [row["scd"] for row in rows if row["k"] == k]
        frac = monotonicity(seq)
        worst = min(worst, frac) if not math.isnan(frac) else worst
        print(f"# {prob.name} k={k}: scd increased in {frac:.0%} of tolerance steps "
              f"(reference: {src})", file=sys.stderr)
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blended-gbdf",
                                description="Blended GBDF-based general linear methods for stiff ODEs")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def method_args(sp, k_default=None):
        sp.add_argument("--k", type=int, required=k_default is None, default=k_default, help="order")
        sp.add_argument("--r", type=int, help="blocksize (default: catalogue)")
        sp.add_argument("--ell", type=int, help="carried points (default: catalogue)")
        sp.add_argument("--choice", type=_choice, default="choice2", help="auxiliary abscissae: 1 or 2")

    sp = sub.add_parser("tabulate", help="assemble a tableau and print its matrices")
    method_args(sp)
    sp.add_argument("--gamma", type=float, help="fix gamma instead of optimising it")
    sp.add_argument("--out", help="write the tableau as JSON")
    sp.set_defaults(func=cmd_tabulate)

    sp = sub.add_parser("analyze", help="blended-iteration parameters and stability checks")
    sp.add_argument("--catalogue", action="store_true", help="all catalogue orders")
    sp.add_argument("--k", type=int, nargs="+", help="orders to analyze")
    sp.add_argument("--r", type=int)
    sp.add_argument("--ell", type=int)
    sp.add_argument("--choice", type=_choice, default="both")
    sp.add_argument("--check", action="store_true", help="compare against the stored parameter tables")
    sp.add_argument("--digits", type=int, default=4)
    sp.add_argument("--out", help="CSV output (default stdout)")
    sp.add_argument("--stability-out", help="stability reports as JSON")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("locus", help="stability boundary locus data")
    method_args(sp)
    sp.add_argument("--window", type=float, nargs=4, default=[-10.0, 10.0, -10.0, 10.0],
                    metavar=("RE0", "RE1", "IM0", "IM1"))
    sp.add_argument("--res", type=int, default=400)
    sp.add_argument("--out", help="output prefix (PREFIX.grid.csv, PREFIX.contour.csv)")
    sp.set_defaults(func=cmd_locus)

    sp = sub.add_parser("solve", help="integrate a problem")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--problem", help="builtin problem name")
    src.add_argument("--file", help="problem JSON file")
    method_args(sp, k_default=4)
    sp.add_argument("--rtol", type=float)
    sp.add_argument("--atol", type=float)
    sp.add_argument("--h0", type=float)
    sp.add_argument("--fixed-h", type=float)
    sp.add_argument("--t-eval", type=_float_list, help="comma-separated output times")
    sp.add_argument("--out", help="IntegrationResult JSON")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("wp", help="work-precision sweep")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--problem")
    src.add_argument("--file")
    sp.add_argument("--k-list", type=_int_list, default=[4, 6, 8])
    sp.add_argument("--tol-list", type=_float_list, default=_float_list(DEFAULT_TOLS))
    sp.add_argument("--atol-ratio", type=float, help="atol = ratio * rtol (default: problem's)")
    sp.add_argument("--choice", type=_choice, default="choice2")
    sp.add_argument("--out", help="CSV output (default stdout)")
    sp.set_defaults(func=cmd_wp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MethodNotEligible, InvalidTriple, UnknownProblem, ParseError,
            ValidationError, NoReference) as exc:
        print(f"blended-gbdf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"blended-gbdf {args.command}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"blended-gbdf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - last resort
        print(f"blended-gbdf {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
