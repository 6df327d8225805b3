"""Stiff test problems and a small JSON format for user-defined ones.

Problem files (``ingest``) hold ``dimension``, ``y0``, ``t_span``, optional
``rtol``/``atol``/``h0`` and an ``rhs`` block of one of two types:

``{"type": "linear", "M": [[...]], "g": {"breaks": [...], "coeffs": [...]}}``
    ``y' = M y + g(t)``; ``g`` is optional and piecewise polynomial:
    ``coeffs[p][i]`` lists the coefficients (increasing degree, in powers of
    ``t - breaks[p]``) of component ``i`` on piece ``p``.

``{"type": "rational", "components": [{"num": [...], "den": [...]}, ...]}``
    ``f_i = num_i(y) / den_i(y)`` with autonomous sums of monomials
    ``{"c": coef, "p": [[j, power], ...]}`` (0-based ``j``); ``den`` defaults
    to 1. The Jacobian is formed analytically.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Callable

import numpy as np


class UnknownProblem(KeyError):
    pass


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class NoReference(LookupError):
    pass


@dataclass(frozen=True)
class OdeProblem:
    name: str
    f: Callable
    y0: np.ndarray
    t_span: tuple
    jac: Callable | None = None
    exact: Callable | None = None
    rtol: float = 1e-6
    atol: float = 1e-6
    h0: float | None = None
    spec: dict | None = field(default=None, repr=False, compare=False)

    @property
    def m(self) -> int:
        return int(np.size(self.y0))

    def with_options(self, **kw) -> "OdeProblem":
        return replace(self, **kw)


# ---------------------------------------------------------------- builtins

def linear_test(lam: float = -1.0, t_end: float = 10.0) -> OdeProblem:
    return OdeProblem(
        name="linear_test",
        f=lambda t, y: lam * y,
        jac=lambda t, y: np.array([[lam]]),
        y0=np.array([1.0]),
        t_span=(0.0, t_end),
        exact=lambda t: np.array([math.exp(lam * t)]),
        rtol=1e-6, atol=1e-12,
        spec=_linear_spec("linear_test", [[lam]], [1.0], (0.0, t_end)),
    )


def prothero_robinson(lam: float = -1e6, t_end: float = 10.0) -> OdeProblem:
    return OdeProblem(
        name="prothero_robinson",
        f=lambda t, y: lam * (y - math.sin(t)) + math.cos(t),
        jac=lambda t, y: np.array([[lam]]),
        y0=np.array([0.0]),
        t_span=(0.0, t_end),
        exact=lambda t: np.array([math.sin(t)]),
        rtol=1e-6, atol=1e-6,
    )


def vanderpol(eps: float = 1e-6, t_end: float = 2.0) -> OdeProblem:
    def f(t, y):
        return np.array([y[1], ((1.0 - y[0] ** 2) * y[1] - y[0]) / eps])

    def jac(t, y):
        return np.array([[0.0, 1.0], [(-2.0 * y[0] * y[1] - 1.0) / eps, (1.0 - y[0] ** 2) / eps]])

    return OdeProblem(name="vanderpol", f=f, jac=jac, y0=np.array([2.0, -0.66]),
                      t_span=(0.0, t_end), rtol=1e-6, atol=1e-6, h0=1e-6)


ROBERTSON_SPEC = {
    "name": "robertson",
    "dimension": 3,
    "t_span": [0.0, 1e4],
    "y0": [1.0, 0.0, 0.0],
    "rtol": 1e-6,
    "atol": 1e-10,
    "h0": 1e-6,
    "rhs": {"type": "rational", "components": [
        {"num": [{"c": -0.04, "p": [[0, 1]]}, {"c": 1e4, "p": [[1, 1], [2, 1]]}]},
        {"num": [{"c": 0.04, "p": [[0, 1]]}, {"c": -1e4, "p": [[1, 1], [2, 1]]},
                 {"c": -3e7, "p": [[1, 2]]}]},
        {"num": [{"c": 3e7, "p": [[1, 2]]}]},
    ]},
}


def robertson(t_end: float = 1e4) -> OdeProblem:
    def f(t, y):
        a, b, c = 0.04 * y[0], 1e4 * y[1] * y[2], 3e7 * y[1] ** 2
        return np.array([-a + b, a - b - c, c])

    def jac(t, y):
        return np.array([
            [-0.04, 1e4 * y[2], 1e4 * y[1]],
            [0.04, -1e4 * y[2] - 6e7 * y[1], -1e4 * y[1]],
            [0.0, 6e7 * y[1], 0.0],
        ])

    spec = dict(ROBERTSON_SPEC, t_span=[0.0, t_end])
    return OdeProblem(name="robertson", f=f, jac=jac, y0=np.array([1.0, 0.0, 0.0]),
                      t_span=(0.0, t_end), rtol=1e-6, atol=1e-10, h0=1e-6, spec=spec)


def pollution() -> OdeProblem:
    """Air pollution kinetics (20 species, 25 reactions); data file shipped."""
    text = resources.files(__package__).joinpath("data", "pollution.json").read_text()
    return loads(text)


BUILTINS = {
    "linear_test": linear_test,
    "prothero_robinson": prothero_robinson,
    "vanderpol": vanderpol,
    "robertson": robertson,
    "pollution": pollution,
}


def builtin(name: str, **params) -> OdeProblem:
    try:
        make = BUILTINS[name]
    except KeyError:
        raise UnknownProblem(f"unknown problem {name!r}; choose from {', '.join(BUILTINS)}") from None
    return make(**params)


# ---------------------------------------------------------------- JSON format

def _linear_spec(name, M, y0, span):
    return {"name": name, "dimension": len(y0), "t_span": list(span), "y0": list(y0),
            "rhs": {"type": "linear", "M": M}}


def _finite(x, what):
    try:
        a = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{what}: expected numbers") from None
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{what}: non-finite entries")
    return a


def _linear_rhs(rhs, m):
    M = _finite(rhs.get("M"), "rhs.M")
    if M.shape != (m, m):
        raise ValidationError(f"rhs.M has shape {M.shape}, expected {(m, m)}")
    g = rhs.get("g")
    if g is None:
        return (lambda t, y: M @ y), (lambda t, y: M.copy())
    breaks = _finite(g.get("breaks"), "rhs.g.breaks")
    try:
        coeffs = [[_finite(c, "rhs.g.coeffs") for c in piece] for piece in g["coeffs"]]
    except (KeyError, TypeError):
        raise ParseError("rhs.g.coeffs missing or malformed") from None
    if breaks.ndim != 1 or len(coeffs) != len(breaks) or np.any(np.diff(breaks) <= 0):
        raise ValidationError("rhs.g needs increasing breaks and one coefficient set per piece")
    if any(len(piece) != m for piece in coeffs):
        raise ValidationError("rhs.g: every piece needs one polynomial per component")

    def gval(t):
        p = max(int(np.searchsorted(breaks, t, side="right")) - 1, 0)
        s = t - breaks[p]
        return np.array([np.polynomial.polynomial.polyval(s, c) for c in coeffs[p]])

    return (lambda t, y: M @ y + gval(t)), (lambda t, y: M.copy())


class _Monomials:
    """Vectorised sum of monomials; ``rows`` says which output each term feeds."""

    def __init__(self, rows, coefs, powers, m, n_out):
        self.rows = np.asarray(rows, dtype=np.intp)
        self.coefs = np.asarray(coefs, dtype=float)
        self.powers = np.asarray(powers, dtype=float).reshape(len(self.coefs), m)
        self.n_out = n_out

    def __call__(self, y):
        if not len(self.coefs):
            return np.zeros(self.n_out)
        vals = self.coefs * np.prod(y[None, :] ** self.powers, axis=1)
        return np.bincount(self.rows, weights=vals, minlength=self.n_out)

    def derivative(self, m):
        """Monomials of the partial derivatives, outputs indexed ``row * m + j``."""
        rows, coefs, powers = [], [], []
        for row, c, p in zip(self.rows, self.coefs, self.powers):
            for j in np.nonzero(p)[0]:
                q = p.copy()
                q[j] -= 1
                rows.append(row * m + j)
                coefs.append(c * p[j])
                powers.append(q)
        return _Monomials(rows, coefs, powers, m, self.n_out * m)


def _parse_terms(terms, m, where):
    out = []
    if not isinstance(terms, list):
        raise ParseError(f"{where}: expected a list of monomials")
    for term in terms:
        try:
            c = float(term["c"])
            pw = np.zeros(m)
            for j, p in term.get("p", []):
                if not (isinstance(j, int) and 0 <= j < m):
                    raise ValidationError(f"{where}: variable index {j} out of range")
                if not (isinstance(p, int) and p >= 0):
                    raise ValidationError(f"{where}: powers must be non-negative integers")
                pw[j] += p
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ParseError(f"{where}: malformed monomial {term!r}") from None
        if not math.isfinite(c):
            raise ValidationError(f"{where}: non-finite coefficient")
        out.append((c, pw))
    return out


def _rational_rhs(rhs, m):
    comps = rhs.get("components")
    if not isinstance(comps, list) or len(comps) != m:
        raise ValidationError(f"rhs.components must list {m} components")
    num, den = ([], [], []), ([], [], [])
    for i, comp in enumerate(comps):
        if not isinstance(comp, dict) or "num" not in comp:
            raise ParseError(f"rhs.components[{i}] needs a 'num' list")
        for c, pw in _parse_terms(comp["num"], m, f"components[{i}].num"):
            num[0].append(i), num[1].append(c), num[2].append(pw)
        for c, pw in _parse_terms(comp.get("den", [{"c": 1.0}]), m, f"components[{i}].den"):
            den[0].append(i), den[1].append(c), den[2].append(pw)
    N = _Monomials(num[0], num[1], num[2], m, m)
    D = _Monomials(den[0], den[1], den[2], m, m)
    dN, dD = N.derivative(m), D.derivative(m)

    def f(t, y):
        y = np.asarray(y, dtype=float)
        return N(y) / D(y)

    def jac(t, y):
        y = np.asarray(y, dtype=float)
        n, d = N(y), D(y)
        Jn = dN(y).reshape(m, m)
        Jd = dD(y).reshape(m, m)
        return (Jn * d[:, None] - n[:, None] * Jd) / (d ** 2)[:, None]

    return f, jac


def from_dict(doc: dict) -> OdeProblem:
    if not isinstance(doc, dict):
        raise ParseError("problem file must hold a JSON object")
    try:
        m = doc["dimension"]
        rhs = doc["rhs"]
        y0 = doc["y0"]
        span = doc["t_span"]
    except KeyError as exc:
        raise ParseError(f"missing field {exc}") from None
    if not isinstance(m, int) or isinstance(m, bool) or m < 1:
        raise ValidationError(f"dimension must be a positive integer, got {m!r}")
    y0 = _finite(y0, "y0")
    if y0.shape != (m,):
        raise ValidationError(f"y0 has {y0.size} entries, dimension is {m}")
    span = _finite(span, "t_span")
    if span.shape != (2,) or not span[1] > span[0]:
        raise ValidationError("t_span must be [t0, t1] with t1 > t0")
    kind = rhs.get("type") if isinstance(rhs, dict) else None
    if kind == "linear":
        f, jac = _linear_rhs(rhs, m)
    elif kind == "rational":
        f, jac = _rational_rhs(rhs, m)
    else:
        raise ParseError(f"rhs.type must be 'linear' or 'rational', got {kind!r}")
    opts = {}
    for key in ("rtol", "atol", "h0"):
        if doc.get(key) is not None:
            v = float(_finite(doc[key], key))
            if v <= 0:
                raise ValidationError(f"{key} must be positive")
            opts[key] = v
    return OdeProblem(name=str(doc.get("name", "ingested")), f=f, jac=jac, y0=y0,
                      t_span=(float(span[0]), float(span[1])), spec=doc, **opts)


def loads(text: str) -> OdeProblem:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    return from_dict(doc)


def ingest(path) -> OdeProblem:
    with open(path) as fh:
        return loads(fh.read())


def serialize(problem: OdeProblem) -> str:
    """JSON text that ``ingest`` turns back into an equivalent problem."""
    if problem.spec is None:
        raise ValueError(f"problem {problem.name!r} has no file representation")
    doc = dict(problem.spec)
    doc.update(name=problem.name, y0=[float(v) for v in problem.y0],
               t_span=[float(v) for v in problem.t_span],
               rtol=problem.rtol, atol=problem.atol, h0=problem.h0)
    return json.dumps(doc, indent=1)


# ---------------------------------------------------------------- references

def _key(t: float) -> str:
    return format(float(t), ".17g")


def _load_cache() -> dict:
    try:
        text = resources.files(__package__).joinpath("data", "references.json").read_text()
    except FileNotFoundError:
        return {}
    return json.loads(text)


def reference_solution(problem: OdeProblem, t: float | None = None, with_source: bool = False):
    """Analytic value if known, else the cached tight-tolerance self-reference."""
    t = problem.t_span[1] if t is None else t
    if problem.exact is not None:
        y, src = np.asarray(problem.exact(t), dtype=float), "analytic"
    else:
        entry = _load_cache().get(problem.name, {}).get(_key(t))
        if entry is None:
            raise NoReference(f"no reference for {problem.name!r} at t={t:g}")
        y, src = np.array(entry["y"]), entry["source"]
    return (y, src) if with_source else y


def generate_reference(problem: OdeProblem, t: float | None = None, orders=(8, 6), rtol=1e-12,
                       atol=None, digits: float = 6.0):
    """Self-reference from two orders at tight tolerance; both must agree to
    ``digits`` significant digits (guarded by ``atol``)."""
    from .solver import SolverOptions, integrate

    t = problem.t_span[1] if t is None else t
    atol = rtol * 1e-2 if atol is None else atol
    prob = replace(problem, t_span=(problem.t_span[0], t))
    sols = []
    for k in orders:
        res = integrate(prob, SolverOptions(k=k, rtol=rtol, atol=atol))
        if not res.success:
            raise NoReference(f"order {k} run failed: {res.message}")
        sols.append(res.y[-1])
    a, b = sols
    agree = scd(a, b, atol * 1e2)
    if agree < digits:
        raise NoReference(f"orders {orders} agree to only {agree:.2f} digits")
    return a, f"self-reference k={orders[0]} rtol={rtol:g}, cross-checked k={orders[1]} ({agree:.1f} digits)"


def scd(y, ref, atol: float = 0.0) -> float:
    """Significant correct digits: ``-log10`` of the max relative error, with
    the denominator guarded by ``atol``."""
    y, ref = np.asarray(y, dtype=float), np.asarray(ref, dtype=float)
    err = np.max(np.abs(y - ref) / np.maximum(np.abs(ref), atol if atol > 0 else 1e-300))
    return math.inf if err == 0 else -math.log10(err)
