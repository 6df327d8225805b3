"""Linear stability of the GLMs and convergence regions of the blended iteration.

On ``y' = lambda y`` with ``q = h lambda`` one step maps the carried block
``y_old`` to ``R(q) y_old`` where ``R(q) = (I - qA)^{-1} U``. The boundary
locus is the level-1 contour of ``rho(R(q))``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np
from skimage.measure import find_contours

from . import linalg
from .blended import convergence_params, rho_of_q

# Sampling used by check_stability.
IMAG_SAMPLES = 2000
IMAG_RANGE = (1e-3, 1e6)
LARGE_Q = -1e8
A_TOL = 1e-9
L_TOL = 1e-6
# Stand-in for infinite radii when contouring.
RADIUS_CAP = 1e6
BISECT_SWEEPS = 30


class SingularAtQ(linalg.SingularMatrix):
    pass


def stability_matrix(tableau, q) -> np.ndarray:
    A = np.asarray(tableau.A, dtype=float)
    M = np.eye(A.shape[0]) - complex(q) * A
    try:
        f = linalg.lu_factor(M)
    except linalg.SingularMatrix:
        raise SingularAtQ(f"I - qA is singular at q = {q}") from None
    return linalg.solve(f, np.asarray(tableau.U, dtype=complex))


def stability_radius(tableau, q) -> float:
    return linalg.spectral_radius(stability_matrix(tableau, q))


def stability_radii(tableau, qs) -> np.ndarray:
    """Vectorised ``rho(R(q))``; singular points give ``inf``."""
    return linalg.stability_radii(tableau.A, tableau.U, qs)


@dataclass
class LocusData:
    re: np.ndarray
    im: np.ndarray
    radius: np.ndarray  # shape (len(im), len(re))
    segments: list  # list of (n, 2) arrays of (re, im) points

    def grid_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["re", "im", "radius"])
        for i, y in enumerate(self.im):
            for j, x in enumerate(self.re):
                w.writerow([f"{x:.10g}", f"{y:.10g}", f"{self.radius[i, j]:.10g}"])
        return buf.getvalue()

    def contour_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["re", "im", "segment_id"])
        for sid, seg in enumerate(self.segments):
            for x, y in seg:
                w.writerow([f"{x:.10g}", f"{y:.10g}", sid])
        return buf.getvalue()

    def contour_points(self) -> np.ndarray:
        if not self.segments:
            return np.zeros((0, 2))
        return np.vstack(self.segments)


def _resolution(resolution):
    if np.ndim(resolution) == 0:
        nx = ny = int(resolution)
    else:
        nx, ny = (int(v) for v in resolution)
    if nx < 2 or ny < 2:
        raise ValueError("resolution must be at least 2 per axis")
    return nx, ny


def boundary_locus(tableau, re_range=(-10.0, 10.0), im_range=(-10.0, 10.0), resolution=400,
                   level: float = 1.0) -> LocusData:
    """Scan ``rho(R(q))`` on a rectangle and extract its level-1 contour."""
    nx, ny = _resolution(resolution)
    re = np.linspace(re_range[0], re_range[1], nx)
    im = np.linspace(im_range[0], im_range[1], ny)
    qs = re[None, :] + 1j * im[:, None]
    rad = stability_radii(tableau, qs)
    capped = np.where(np.isfinite(rad), np.minimum(rad, RADIUS_CAP), RADIUS_CAP)
    segments = []
    for path in find_contours(capped, level):
        # path rows are (im index, re index); each vertex sits on a grid edge
        segments.append(_polish(tableau, path, re, im, level))
    return LocusData(re=re, im=im, radius=rad, segments=segments)


def _polish(tableau, path, re, im, level, sweeps=BISECT_SWEEPS):
    """Move each marching-squares vertex onto the exact level crossing of its
    grid edge by bisection (linear interpolation is biased near q = 0)."""
    ri, ci = path[:, 0], path[:, 1]
    on_row = np.abs(ri - np.round(ri)) <= np.abs(ci - np.round(ci))
    x = np.interp(ci, np.arange(len(re)), re)
    y = np.interp(ri, np.arange(len(im)), im)
    c0 = np.clip(np.floor(ci).astype(int), 0, len(re) - 2)
    r0 = np.clip(np.floor(ri).astype(int), 0, len(im) - 2)
    # edge end points a (low) and b (high) as complex numbers
    a = np.where(on_row, re[c0] + 1j * y, x + 1j * im[r0])
    b = np.where(on_row, re[c0 + 1] + 1j * y, x + 1j * im[r0 + 1])
    fa = stability_radii(tableau, a) - level
    fb = stability_radii(tableau, b) - level
    ok = np.sign(fa) * np.sign(fb) < 0
    lo, hi = a[ok], b[ok]
    flo = fa[ok]
    for _ in range(sweeps):
        mid = 0.5 * (lo + hi)
        fm = stability_radii(tableau, mid) - level
        same = np.sign(fm) == np.sign(flo)
        lo = np.where(same, mid, lo)
        flo = np.where(same, fm, flo)
        hi = np.where(same, hi, mid)
    z = x + 1j * y
    z[ok] = 0.5 * (lo + hi)
    return np.column_stack([z.real, z.imag])


@dataclass
class StabilityReport:
    k: int
    r: int
    ell: int
    choice: str
    max_imag_axis_radius: float
    radius_at_large_q: float
    a_stable: bool
    l_stable: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def imag_axis_samples(tableau) -> np.ndarray:
    x = np.geomspace(IMAG_RANGE[0], IMAG_RANGE[1], IMAG_SAMPLES)
    if tableau.gamma:
        x = np.sort(np.append(x, 1.0 / tableau.gamma))
    return x


def check_stability(tableau) -> StabilityReport:
    """Sampled A- and L-stability check on the imaginary axis and at ``q = -1e8``."""
    x = imag_axis_samples(tableau)
    rad = stability_radii(tableau, 1j * x)
    top = float(np.max(rad))
    far = float(stability_radii(tableau, np.array([LARGE_Q]))[0])
    a_ok = bool(top <= 1.0 + A_TOL)
    return StabilityReport(
        k=tableau.k, r=tableau.r, ell=tableau.ell, choice=tableau.choice,
        max_imag_axis_radius=top, radius_at_large_q=far,
        a_stable=a_ok, l_stable=bool(a_ok and far <= L_TOL),
    )


def convergence_region(tableau, grid) -> np.ndarray:
    """``rho(q) = |q| / |1 - gamma q|^2 * rho_tilde`` on an array of ``q``."""
    if tableau.gamma is None:
        raise ValueError("tableau has no gamma")
    p = convergence_params(tableau.A, tableau.gamma)
    return np.asarray(rho_of_q(p.rho_tilde, p.gamma, np.asarray(grid, dtype=complex)))
