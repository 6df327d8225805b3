"""Small dense matrix kernels used throughout the package.

Matrices are plain numpy arrays (float64 or complex128). The heavy lifting
is done by the compiled ``_kernels`` extension when it is importable, else by
the pure-Python ``_kernels_py`` twin; set ``BLENDED_GBDF_PURE=1`` to force the
fallback. ``BACKEND`` names the active one.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py

if os.environ.get("BLENDED_GBDF_PURE") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

PIVOT_RTOL = 1e-14
QR_TOL = 1e-13


class LinAlgError(ArithmeticError):
    pass


class SingularMatrix(LinAlgError):
    pass


class DimensionMismatch(LinAlgError, ValueError):
    pass


class NoConvergence(LinAlgError):
    pass


class NoSignChange(LinAlgError, ValueError):
    pass


@dataclass(frozen=True)
class LuFactorization:
    """Packed unit-lower/upper factors plus LAPACK-style row interchanges."""

    factors: np.ndarray
    pivots: np.ndarray

    @property
    def n(self) -> int:
        return self.factors.shape[0]

    def det(self):
        d = np.prod(np.diag(self.factors))
        swaps = int(np.count_nonzero(self.pivots != np.arange(self.n)))
        return -d if swaps % 2 else d


def _square(m) -> np.ndarray:
    a = np.asarray(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def lu_factor(m, backend=None) -> LuFactorization:
    """Partial-pivoting LU. Raises :class:`SingularMatrix` when a pivot
    magnitude drops to ``1e-14 * max|m|`` or below."""
    impl = backend or _impl
    a = _square(m)
    factors, piv, info = impl.lu_factor(a, PIVOT_RTOL)
    if info:
        raise SingularMatrix(f"pivot {info} below {PIVOT_RTOL:g} relative threshold")
    return LuFactorization(factors, piv)


def solve(f: LuFactorization, rhs, backend=None) -> np.ndarray:
    """Solve ``m x = rhs`` for a vector or a matrix of right-hand sides."""
    impl = backend or _impl
    b = np.asarray(rhs)
    if b.ndim not in (1, 2) or b.shape[0] != f.n:
        raise DimensionMismatch(f"rhs shape {b.shape} does not match order {f.n}")
    x = impl.lu_solve(f.factors, f.pivots, b.reshape(f.n, -1))
    return x.reshape(b.shape)


def det(m) -> float | complex:
    try:
        return lu_factor(m).det()
    except SingularMatrix:
        return 0.0


def inv(m) -> np.ndarray:
    a = _square(m)
    return solve(lu_factor(a), np.eye(a.shape[0], dtype=a.dtype))


def eigenvalues(m, backend=None) -> np.ndarray:
    """Complex spectrum via Householder-Hessenberg reduction and shifted QR.

    Raises :class:`NoConvergence` after ``100 n^2`` QR sweeps.
    """
    impl = backend or _impl
    a = _square(m)
    n = a.shape[0]
    w, info = impl.eigvals(a, QR_TOL, 100 * n * n)
    if info:
        raise NoConvergence(f"QR iteration did not converge for n={n}")
    if not np.iscomplexobj(a):
        # Real input: snap roundoff-level imaginary parts.
        scale = max(1.0, float(np.max(np.abs(w))))
        w = np.where(np.abs(w.imag) <= 1e-14 * scale, w.real + 0j, w)
    return w


def spectral_radius(m, backend=None) -> float:
    a = np.asarray(m)
    if a.size and not np.any(a):
        return 0.0
    return float(np.max(np.abs(eigenvalues(a, backend=backend))))


def stability_radii(A, U, qs, backend=None) -> np.ndarray:
    """``rho((I - qA)^{-1} U)`` for every ``q`` in ``qs`` (any shape).

    Singular ``I - qA`` gives ``inf``.
    """
    impl = backend or _impl
    A = _square(A)
    qs = np.asarray(qs, dtype=np.complex128)
    out = impl.stability_radii(A, np.asarray(U, dtype=np.float64), qs, PIVOT_RTOL, QR_TOL,
                               100 * A.shape[0] ** 2)
    if np.any(np.isnan(out)):
        raise NoConvergence("QR iteration failed inside a stability scan")
    return out.reshape(qs.shape)


def positive_poly_root(coeffs, tol: float = 1e-14) -> float:
    """Root in ``(0, 1]`` of a real polynomial with a sign change there.

    ``coeffs`` are in increasing degree. Bisection brackets the root, a few
    safeguarded Newton steps polish it.
    """
    c = [float(x) for x in coeffs]

    def p(z):
        acc = 0.0
        for a in reversed(c):
            acc = acc * z + a
        return acc

    def dp(z):
        acc = 0.0
        for i in range(len(c) - 1, 0, -1):
            acc = acc * z + i * c[i]
        return acc

    lo, hi = 0.0, 1.0
    plo, phi = p(lo), p(hi)
    if phi == 0.0:
        return 1.0
    if plo * phi > 0:
        raise NoSignChange("polynomial has no sign change on [0, 1]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pm = p(mid)
        if pm == 0.0 or hi - lo < 1e-12:
            break
        if (pm < 0) == (plo < 0):
            lo, plo = mid, pm
        else:
            hi = mid
    z = 0.5 * (lo + hi)
    for _ in range(20):
        d = dp(z)
        if d == 0.0:
            break
        step = p(z) / d
        znew = z - step
        if not lo <= znew <= hi:
            break
        z = znew
        if abs(step) <= 1e-17:
            break
    if abs(p(z)) > tol * max(1.0, max(abs(a) for a in c)):
        raise NoSignChange(f"root refinement stalled (|p|={abs(p(z)):.3g})")
    return z
