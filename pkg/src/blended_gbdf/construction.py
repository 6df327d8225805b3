"""GBDF differentiation formulas and their assembly into GLM tableaux.

A method is identified by the triple ``(k, r, ell)``: order ``k``, blocksize
``r`` and ``ell`` equally spaced points carried to the next step (the other
``r - ell`` block points are auxiliary). The block grid, in units of ``h``,
is ``{-(ell-1), ..., 0}`` for the carried past values followed by the new
abscissae ``c_1 < ... < c_r = ell``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import linalg

# Table triples (k -> (r, ell)); plus the classical BDF1/BDF2 blocks.
CATALOGUE = {
    3: (2, 2),
    4: (4, 3),
    6: (5, 4),
    8: (6, 5),
    10: (7, 6),
    12: (9, 7),
    14: (10, 8),
    16: (11, 9),
}
CLASSICAL = {1: (1, 1), 2: (2, 2)}
CHOICES = ("choice1", "choice2", "none")


class InvalidTriple(ValueError):
    pass


class DuplicateNodes(ValueError):
    pass


@dataclass(frozen=True)
class LmfRow:
    """One differentiation formula: ``sum alpha_i y(stencil_i) = h y'(stencil[deriv_index])``."""

    stencil: tuple
    alpha: tuple
    deriv_index: int

    def residual(self, degree: int) -> float:
        """Largest exactness defect over monomials of degree <= ``degree``."""
        x = np.asarray(self.stencil, dtype=float)
        a = np.asarray(self.alpha, dtype=float)
        xd = x[self.deriv_index]
        worst = 0.0
        for p in range(degree + 1):
            exact = p * xd ** (p - 1) if p else 0.0
            scale = max(1.0, float(np.max(np.abs(x))) ** p)
            worst = max(worst, abs(float(a @ x**p) - exact) / scale)
        return worst


def gbdf_nu(k: int) -> int:
    """Position of the derivative node in the GBDF main formula."""
    if k < 1:
        raise InvalidTriple("order k must be >= 1")
    return k // 2 + 1


def differentiation_weights(stencil: Sequence, deriv_index: int) -> LmfRow:
    """Weights of the order-k derivative formula at ``stencil[deriv_index]``.

    Evaluated as derivatives of the Lagrange basis at that node, so the
    arithmetic stays exact when the nodes are ``Fraction`` instances.
    """
    x = list(stencil)
    n = len(x)
    if n < 2:
        raise DuplicateNodes("need at least two nodes")
    if len(set(x)) != n:
        raise DuplicateNodes(f"stencil has repeated nodes: {x}")
    if not 0 <= deriv_index < n:
        raise IndexError("deriv_index outside the stencil")
    conv = Fraction if any(isinstance(v, Fraction) for v in x) else float
    x = [conv(v) for v in x]
    j = deriv_index
    xj = x[j]
    alpha = []
    for i in range(n):
        if i == j:
            alpha.append(sum(conv(1) / (xj - x[m]) for m in range(n) if m != j))
            continue
        num = conv(1)
        den = conv(1)
        for m in range(n):
            if m != i:
                den *= x[i] - x[m]
                if m != j:
                    num *= xj - x[m]
        alpha.append(num / den)
    return LmfRow(tuple(x), tuple(alpha), j)


def interpolation_weights(nodes: Sequence[float], x: float) -> np.ndarray:
    """Lagrange weights ``l_i(x)`` so that ``p(x) = sum w_i p(nodes_i)``."""
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    w = np.ones(n)
    for i in range(n):
        for m in range(n):
            if m != i:
                w[i] *= (x - nodes[m]) / (nodes[i] - nodes[m])
    return w


def _xi(r: int, ell: int, choice: str, exact: bool = False):
    nb = r - ell
    if choice == "choice2":
        den = 2 ** (nb + 1) - 1
        if exact:
            return [Fraction(2 ** (nb - m), den) for m in range(nb + 1)]
        return [2.0 ** (nb - m) / den for m in range(nb + 1)]
    if choice == "choice1":
        if exact:
            raise InvalidTriple("choice1 abscissae are irrational")
        zeta = linalg.positive_poly_root([-1.0] + [1.0] * (nb + 1))
        return [zeta ** (m + 1) for m in range(nb + 1)]
    raise InvalidTriple(f"unknown auxiliary-point choice {choice!r}")


def _normalise_choice(choice, r: int, ell: int) -> str:
    if choice in (1, "1"):
        choice = "choice1"
    elif choice in (2, "2"):
        choice = "choice2"
    elif choice is None:
        choice = "none"
    if choice not in CHOICES:
        raise InvalidTriple(f"unknown auxiliary-point choice {choice!r}")
    if r == ell:
        return "none"
    if choice == "none":
        raise InvalidTriple("auxiliary points need choice1 or choice2")
    return choice


def abscissae(k: int, r: int, ell: int, choice="choice2", exact: bool = False):
    """Block abscissae ``c`` (length ``r``) and the last ``r - ell + 1`` steps ``xi``."""
    if not 1 <= ell <= r:
        raise InvalidTriple(f"need 1 <= ell <= r, got ell={ell}, r={r}")
    choice = _normalise_choice(choice, r, ell)
    one = Fraction(1) if exact else 1.0
    if choice == "none":
        xi = [one] * 1
    else:
        xi = _xi(r, ell, choice, exact)
    c = [one * i for i in range(1, ell)]
    s = one * (ell - 1)
    for x in xi:
        s = s + x
        c.append(s)
    c[-1] = one * ell
    return c, xi


@dataclass(frozen=True)
class GlmTableau:
    k: int
    r: int
    ell: int
    nu: int
    choice: str
    c: np.ndarray
    xi: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    A: np.ndarray
    U: np.ndarray
    gamma: float | None = None
    rows: tuple = field(default=(), repr=False, compare=False)

    @property
    def aux_indices(self) -> tuple:
        return tuple(range(self.ell - 1, self.r - 1))

    @property
    def carried_indices(self) -> tuple:
        """0-based block slots whose values are carried to the next step."""
        return tuple(range(self.ell - 1)) + (self.r - 1,)

    @property
    def past_offsets(self) -> np.ndarray:
        """Position (units of h, relative to the block start) of every ``y_old`` slot."""
        return self.c - self.ell

    @property
    def label(self) -> str:
        return f"({self.k},{self.r},{self.ell})" + ("" if self.choice == "none" else f"/{self.choice}")

    def order_residual(self, degree: int | None = None) -> float:
        """Max defect of ``A2 y_new + A1 y_old = h y'_new`` on monomials."""
        degree = self.k if degree is None else degree
        c = self.c
        past = self.past_offsets
        scale = max(1.0, float(self.ell))
        worst = 0.0
        for p in range(degree + 1):
            ynew = (c / scale) ** p
            yold = (past / scale) ** p
            dy = p * (c / scale) ** (p - 1) / scale if p else np.zeros_like(c)
            res = self.A2 @ ynew + self.A1 @ yold - dy
            worst = max(worst, float(np.max(np.abs(res))))
        return worst

    def to_json(self) -> str:
        def num(x):
            return float(f"{float(x):.17g}")

        def mat(m):
            return [[num(x) for x in row] for row in np.asarray(m)]

        doc = {
            "k": self.k,
            "r": self.r,
            "ell": self.ell,
            "nu": self.nu,
            "choice": self.choice,
            "c": [num(x) for x in self.c],
            "xi": [num(x) for x in self.xi],
            "A": mat(self.A),
            "U": mat(self.U),
            "A1": mat(self.A1),
            "A2": mat(self.A2),
            "gamma": None if self.gamma is None else num(self.gamma),
        }
        return _dump17(doc)

    @classmethod
    def from_json(cls, text: str) -> "GlmTableau":
        d = json.loads(text)
        arr = lambda key: np.array(d[key], dtype=float)  # noqa: E731
        return cls(
            k=int(d["k"]), r=int(d["r"]), ell=int(d["ell"]), nu=int(d["nu"]),
            choice=d["choice"], c=arr("c"), xi=arr("xi"), A1=arr("A1"), A2=arr("A2"),
            A=arr("A"), U=arr("U"), gamma=d.get("gamma"),
        )


def _dump17(doc) -> str:
    """JSON with every float printed to 17 significant digits."""
    def enc(o, indent=0):
        pad = "  " * indent
        if isinstance(o, dict):
            items = [f'{pad}  {json.dumps(k)}: {enc(v, indent + 1).lstrip()}' for k, v in o.items()]
            return pad + "{\n" + ",\n".join(items) + "\n" + pad + "}"
        if isinstance(o, list):
            if o and isinstance(o[0], list):
                inner = [enc(v, indent + 1) for v in o]
                return pad + "[\n" + ",\n".join(inner) + "\n" + pad + "]"
            return pad + "[" + ", ".join(enc(v).strip() for v in o) + "]"
        if isinstance(o, float):
            return pad + format(o, ".17g")
        return pad + json.dumps(o)
    return enc(doc) + "\n"


def _feasible(k: int, r: int, ell: int) -> None:
    if k < 1 or r < 1:
        raise InvalidTriple("k and r must be positive")
    if not 1 <= ell <= r:
        raise InvalidTriple(f"need 1 <= ell <= r, got ({k},{r},{ell})")
    nu = gbdf_nu(k)
    if ell < nu:
        raise InvalidTriple(f"({k},{r},{ell}): need ell >= nu = {nu} past values for the main formula")
    if ell + r < k + 1:
        raise InvalidTriple(f"({k},{r},{ell}): grid has {ell + r} nodes, need k+1 = {k + 1}")


def _block_rows(k, r, ell, c, exact=False):
    """Stencils (as grid indices) and derivative positions for each block row."""
    nu = gbdf_nu(k)
    zero = Fraction(0) if exact else 0.0
    grid = [zero + (i - (ell - 1)) for i in range(ell)] + list(c)
    rows = []
    for i in range(1, r + 1):
        pos = ell - 1 + i
        if i <= r - (k - nu):
            idx = list(range(pos - nu, pos + k - nu + 1))
            j = nu
        else:
            idx = list(range(len(grid) - k - 1, len(grid)))
            j = k - (r - i)
        rows.append((idx, j))
    return grid, rows


def _assemble(k, r, ell, choice, rowspec, exact=False):
    c, xi = abscissae(k, r, ell, choice, exact=exact)
    choice = _normalise_choice(choice, r, ell)
    grid, rows = rowspec(k, r, ell, c, exact)
    past_col = list(range(ell - 1)) + [r - 1]
    zero = Fraction(0) if exact else 0.0
    A1 = [[zero] * r for _ in range(r)]
    A2 = [[zero] * r for _ in range(r)]
    lmf = []
    for i, (idx, j) in enumerate(rows):
        row = differentiation_weights([grid[s] for s in idx], j)
        lmf.append(row)
        for s, w in zip(idx, row.alpha):
            if s < ell:
                A1[i][past_col[s]] += w
            else:
                A2[i][s - ell] += w
    return c, xi, choice, A1, A2, lmf


def _frac_inv(m):
    """Gauss-Jordan inverse of a ``Fraction`` matrix (list of rows)."""
    n = len(m)
    a = [list(row) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(m)]
    for col in range(n):
        piv = next((i for i in range(col, n) if a[i][col] != 0), None)
        if piv is None:
            raise linalg.SingularMatrix("exact inverse of a singular matrix")
        a[col], a[piv] = a[piv], a[col]
        p = a[col][col]
        a[col] = [v / p for v in a[col]]
        for i in range(n):
            if i != col and a[i][col] != 0:
                q = a[i][col]
                a[i] = [v - q * w for v, w in zip(a[i], a[col])]
    return [row[n:] for row in a]


def _frac_matmul(a, b):
    return [[sum(x * y for x, y in zip(row, col)) for col in zip(*b)] for row in a]


def _exact_a_u(A1, A2):
    """``A = A2^{-1}`` and ``U = -A A1`` in rational arithmetic, rounded once."""
    A = _frac_inv(A2)
    U = _frac_matmul(A, A1)
    return (np.array([[float(v) for v in row] for row in A]),
            np.array([[-float(v) for v in row] for row in U]))


def assemble_glm(k: int, r: int, ell: int, choice="choice2", gamma="optimal") -> GlmTableau:
    """Build the GBDF-based GLM for ``(k, r, ell)``.

    Rows whose derivative point leaves room for ``k - nu`` later nodes use the
    main GBDF formula (derivative at stencil position ``nu``); the remaining
    rows are closing formulas on the last ``k + 1`` grid nodes. ``gamma`` is
    ``"optimal"`` (minimise the maximum amplification factor), a number, or
    ``None``.
    """
    _feasible(k, r, ell)
    c, xi, choice, A1, A2, lmf = _assemble(k, r, ell, choice, _block_rows)
    return _finish(k, r, ell, gbdf_nu(k), choice, c, xi, A1, A2, lmf, gamma,
                   exact=_exact_or_none(k, r, ell, choice, _block_rows))


def _exact_or_none(k, r, ell, choice, rowspec):
    # rational abscissae: form A and U exactly so the order conditions hold to rounding
    if choice == "choice1":
        return None
    _, _, _, A1, A2, _ = _assemble(k, r, ell, choice, rowspec, exact=True)
    return _exact_a_u(A1, A2)


def _finish(k, r, ell, nu, choice, c, xi, A1, A2, lmf, gamma, exact=None):
    A1 = np.array(A1, dtype=float)
    A2 = np.array(A2, dtype=float)
    if exact is None:
        A = linalg.inv(A2)
        U = -A @ A1
    else:
        A, U = exact
    for j in range(ell - 1, r - 1):
        U[:, j] = 0.0
    if isinstance(gamma, str):
        if gamma != "optimal":
            raise ValueError(f"gamma must be 'optimal', a float or None, not {gamma!r}")
        from .blended import optimize_gamma

        gamma = optimize_gamma(A).gamma
    return GlmTableau(
        k=k, r=r, ell=ell, nu=nu, choice=choice,
        c=np.array(c, dtype=float), xi=np.array(xi, dtype=float),
        A1=A1, A2=A2, A=A, U=U, gamma=None if gamma is None else float(gamma), rows=tuple(lmf),
    )


def exact_matrices(k: int, r: int, ell: int, choice="choice2"):
    """``(A1, A2)`` as ``Fraction`` matrices (rational abscissae only)."""
    _feasible(k, r, ell)
    _, _, _, A1, A2, _ = _assemble(k, r, ell, choice, _block_rows, exact=True)
    return A1, A2


def _ivm_rows(k, r, ell, c, exact=False):
    zero = Fraction(0) if exact else 0.0
    grid = [zero + (i - (ell - 1)) for i in range(ell)] + list(c)
    rows = []
    for i in range(1, r + 1):
        pos = ell - 1 + i
        rows.append((list(range(pos - k, pos + 1)), k))
    return grid, rows


def bdf_block(k: int, gamma="optimal") -> GlmTableau:
    """Classical BDF``k`` (derivative always at the newest node) written as a
    ``(k, k, k)`` block GLM; a reference case that is not A-stable for k >= 3."""
    c, xi, choice, A1, A2, lmf = _assemble(k, k, k, "none", _ivm_rows)
    return _finish(k, k, k, k, "none", c, xi, A1, A2, lmf, gamma,
                   exact=_exact_or_none(k, k, k, "none", _ivm_rows))


def catalogue_method(k: int, choice="choice2", gamma="optimal") -> GlmTableau:
    if k in CATALOGUE:
        r, ell = CATALOGUE[k]
    elif k in CLASSICAL:
        r, ell = CLASSICAL[k]
    else:
        raise InvalidTriple(f"no catalogue method of order {k}")
    return assemble_glm(k, r, ell, choice, gamma=gamma)


def error_estimator_tableau(k: int, r: int, ell: int, choice="choice2") -> GlmTableau:
    """Order ``k + 1`` companion on the same grid, used for residual estimates."""
    try:
        _feasible(k + 1, r, ell)
    except InvalidTriple as exc:
        raise InvalidTriple(
            f"({k},{r},{ell}) has no order-{k + 1} companion on its grid; increase r ({exc})"
        ) from None
    return assemble_glm(k + 1, r, ell, choice, gamma=None)


@dataclass(frozen=True)
class StartTableau:
    """Block GBDF of order ``k`` and blocksize ``k`` used to leave ``y0``.

    ``calA`` is ``k x (k+1)`` over ``(y0, ..., yk)``; the derivative matrix is
    ``(0 | I_k)``. ``A`` is the inverse of the square part, so the start block
    solves ``y - h A f = eta`` with ``eta = U0 y0``.
    """

    k: int
    calA: np.ndarray
    A: np.ndarray
    U0: np.ndarray
    gamma: float | None
    c: np.ndarray

    @property
    def r(self) -> int:
        return self.k


def starting_tableau(k: int, gamma="optimal") -> StartTableau:
    if k < 1:
        raise InvalidTriple("order k must be >= 1")
    nodes = list(range(k + 1))
    rows = [list(differentiation_weights([Fraction(v) for v in nodes], j).alpha) for j in range(1, k + 1)]
    calA = np.array([[float(v) for v in row] for row in rows])
    A, U0 = _exact_a_u([row[:1] for row in rows], [row[1:] for row in rows])
    U0 = U0[:, 0]
    if gamma == "optimal":
        from .blended import optimize_gamma

        gamma = optimize_gamma(A, require_rhp=False).gamma
    return StartTableau(k=k, calA=calA, A=A, U0=U0, gamma=gamma,
                        c=np.arange(1, k + 1, dtype=float))


def with_gamma(tableau: GlmTableau, gamma: float) -> GlmTableau:
    return replace(tableau, gamma=float(gamma))
