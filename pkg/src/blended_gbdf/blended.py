"""Blended reformulation of a GLM at the level of the linear test equation.

For ``y - qAy = eta`` the blended iteration has iteration matrix
``Z(q) = q / (1 - gamma q)^2 * W`` with ``W = A^{-1} (A - gamma I)^2``; all
its convergence figures follow from the spectral radius of ``W``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg


class NonConvexWarning(RuntimeWarning):
    pass


class Divergence(ArithmeticError):
    pass


@dataclass(frozen=True)
class BlendedParams:
    gamma: float
    rho_tilde: float  # nonstiff amplification factor
    rho_inf: float  # stiff convergence factor
    rho_star: float  # maximum amplification factor on the imaginary axis
    gamma_star: float  # smallest eigenvalue modulus of A

    def rho(self, q) -> float:
        """Spectral radius of ``Z(q)``."""
        return rho_of_q(self.rho_tilde, self.gamma, q)

    def row(self) -> tuple:
        return (self.gamma, self.rho_tilde, self.rho_inf, self.rho_star)


def iteration_core(A, gamma: float) -> np.ndarray:
    """``W = A^{-1} (A - gamma I)^2``; ``Z(q)`` is ``q/(1-gamma q)^2 * W``."""
    A = np.asarray(A, dtype=float)
    B = A - gamma * np.eye(A.shape[0])
    return linalg.solve(linalg.lu_factor(A), B @ B)


def iteration_matrix(A, gamma: float, q) -> np.ndarray:
    return q / (1.0 - gamma * q) ** 2 * iteration_core(A, gamma)


def rho_of_q(rho_tilde: float, gamma: float, q):
    q = np.asarray(q, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.abs(q) / np.abs(1.0 - gamma * q) ** 2 * rho_tilde
    return float(out) if out.ndim == 0 else out


def gamma_star(A) -> float:
    return float(np.min(np.abs(linalg.eigenvalues(A))))


def convergence_params(A, gamma: float, gstar: float | None = None) -> BlendedParams:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    rt = linalg.spectral_radius(iteration_core(A, gamma))
    return BlendedParams(
        gamma=float(gamma),
        rho_tilde=rt,
        rho_inf=rt / gamma**2,
        rho_star=rt / (2.0 * gamma),
        gamma_star=gamma_star(A) if gstar is None else gstar,
    )


def _rho_star(A, g):
    return linalg.spectral_radius(iteration_core(A, g)) / (2.0 * g)


def optimize_gamma(A, tol: float = 1e-6, scan_points: int = 200, require_rhp: bool = True) -> BlendedParams:
    """Minimise ``rho*`` over ``gamma`` in ``[0.1, 10] * gamma*``.

    A log-spaced scan brackets the minimiser, golden-section search refines
    it. Several separated local minima in the scan trigger
    :class:`NonConvexWarning`; the smallest such gamma is then used.
    ``require_rhp=False`` skips the spectrum check (the starting blocks of
    order >= 6 have a conjugate pair just left of the imaginary axis).
    """
    A = np.asarray(A, dtype=float)
    eig = linalg.eigenvalues(A)
    if require_rhp and np.any(eig.real <= 0):
        raise ValueError("A must have its spectrum in the open right half-plane")
    gs = float(np.min(np.abs(eig)))
    grid = np.geomspace(0.1 * gs, 10.0 * gs, scan_points)
    vals = np.array([_rho_star(A, g) for g in grid])
    minima = [i for i in range(len(grid))
              if (i == 0 or vals[i] <= vals[i - 1]) and (i == len(grid) - 1 or vals[i] <= vals[i + 1])]
    best = int(np.argmin(vals))
    distinct = [i for i in minima if abs(vals[i] - vals[best]) > 1e-6]
    if distinct:
        warnings.warn(
            "rho*(gamma) has several local minima at gamma = "
            + ", ".join(f"{grid[i]:.6g} (rho*={vals[i]:.6g})" for i in minima),
            NonConvexWarning,
            stacklevel=2,
        )
        best = minima[0]
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    g = _golden(lambda x: _rho_star(A, x), lo, hi, tol)
    return convergence_params(A, g, gstar=gs)


def _golden(fun, a, b, tol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def blended_linear_system(A, gamma: float, q, eta):
    """``(M(q), N(q), eta(q))`` of the blended form of ``(I - qA) y = eta``."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    I = np.eye(n)
    Ainv = linalg.inv(A)
    theta = 1.0 / (1.0 - gamma * q)
    M = theta * (I - q * A) + gamma * (1.0 - theta) * (Ainv - q * I)
    N = (1.0 - gamma * q) * I
    eta = np.asarray(eta, dtype=complex)
    eta_q = theta * eta + (1.0 - theta) * gamma * (Ainv @ eta)
    return M, N, eta_q


def scalar_blended_iterate(tableau, q, eta, sweeps: int, y0=None, gamma: float | None = None):
    """Run ``N(q) y+ = (N(q) - M(q)) y + eta(q)`` on the test equation.

    ``tableau`` is anything with ``A`` (and ``gamma`` unless given). Returns
    the ``(sweeps + 1, r)`` complex array of iterates, starting with ``y0``
    (zero by default).
    """
    A = np.asarray(getattr(tableau, "A", tableau), dtype=float)
    gamma = getattr(tableau, "gamma", None) if gamma is None else gamma
    if gamma is None:
        raise ValueError("gamma is required")
    q = complex(q)
    if 1.0 - gamma * q == 0:
        raise ZeroDivisionError("1 - gamma q vanishes")
    M, N, eta_q = blended_linear_system(A, gamma, q, eta)
    n = A.shape[0]
    y = np.zeros(n, dtype=complex) if y0 is None else np.array(y0, dtype=complex)
    out = [y.copy()]
    Ninv = 1.0 / N[0, 0]
    NM = N - M
    for _ in range(sweeps):
        y = Ninv * (NM @ y + eta_q)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > 1e12:
            raise Divergence(f"blended iterate exceeded 1e12 at q={q}")
        out.append(y.copy())
    return np.array(out)


def contraction_rate(errors) -> float:
    """Geometric-mean contraction over the second half of an error sequence."""
    norms = np.array([np.linalg.norm(e) for e in errors])
    n = len(norms) - 1
    half = n // 2
    if norms[half] == 0 or norms[-1] == 0:
        return 0.0
    return float(np.exp((np.log(norms[-1]) - np.log(norms[half])) / (n - half)))
