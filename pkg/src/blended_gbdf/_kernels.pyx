# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense kernels: partial-pivoting LU, triangular solves, complex
Hessenberg QR eigenvalues and batched stability radii.

Same call signatures and return conventions as ``_kernels_py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, hypot, copysign, INFINITY, NAN

cnp.import_array()

ctypedef fused scalar_t:
    double
    double complex


cdef inline double _cabs(double complex z) noexcept nogil:
    return hypot(z.real, z.imag)


cdef inline double _mag(scalar_t z) noexcept nogil:
    if scalar_t is double:
        return fabs(z)
    else:
        return hypot(z.real, z.imag)


cdef inline double complex _csqrt(double complex w) noexcept nogil:
    cdef double r = hypot(w.real, w.imag)
    cdef double re = sqrt(0.5 * (r + w.real))
    cdef double im = copysign(sqrt(0.5 * (r - w.real)), w.imag)
    return re + 1j * im


cdef Py_ssize_t _lu_inplace(scalar_t[:, ::1] a, Py_ssize_t[::1] piv, double thresh) noexcept nogil:
    """Row-interchange LU; returns 0 or 1-based index of the failing pivot."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, j, k, p
    cdef double best, v
    cdef scalar_t tmp, l
    for k in range(n):
        p = k
        best = _mag(a[k, k])
        for i in range(k + 1, n):
            v = _mag(a[i, k])
            if v > best:
                best = v
                p = i
        piv[k] = p
        if best <= thresh:
            return k + 1
        if p != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = tmp
        for i in range(k + 1, n):
            a[i, k] = a[i, k] / a[k, k]
            l = a[i, k]
            if l != 0:
                for j in range(k + 1, n):
                    a[i, j] = a[i, j] - l * a[k, j]
    return 0


cdef void _lu_solve_inplace(scalar_t[:, ::1] lu, Py_ssize_t[::1] piv, scalar_t[:, ::1] b) noexcept nogil:
    cdef Py_ssize_t n = lu.shape[0]
    cdef Py_ssize_t nrhs = b.shape[1]
    cdef Py_ssize_t i, j, k, p
    cdef scalar_t tmp, l
    for k in range(n):
        p = piv[k]
        if p != k:
            for j in range(nrhs):
                tmp = b[k, j]
                b[k, j] = b[p, j]
                b[p, j] = tmp
    for k in range(n):
        for i in range(k + 1, n):
            l = lu[i, k]
            if l != 0:
                for j in range(nrhs):
                    b[i, j] = b[i, j] - l * b[k, j]
    for k in range(n - 1, -1, -1):
        for j in range(nrhs):
            b[k, j] = b[k, j] / lu[k, k]
        for i in range(k):
            l = lu[i, k]
            if l != 0:
                for j in range(nrhs):
                    b[i, j] = b[i, j] - l * b[k, j]


def lu_factor(a, double rel_tol):
    """Factor a square matrix. Returns ``(lu, piv, info)``; ``info`` > 0 flags
    the first pivot whose magnitude fell below ``rel_tol * max|a|``."""
    cdef double[:, ::1] ar
    cdef double complex[:, ::1] ac
    cdef Py_ssize_t info
    cdef double thresh
    if np.iscomplexobj(a):
        lu = np.array(a, dtype=np.complex128, order="C", copy=True)
    else:
        lu = np.array(a, dtype=np.float64, order="C", copy=True)
    n = lu.shape[0]
    piv = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t[::1] pv = piv
    thresh = rel_tol * (np.max(np.abs(lu)) if n else 0.0)
    if lu.dtype == np.complex128:
        ac = lu
        info = _lu_inplace(ac, pv, thresh)
    else:
        ar = lu
        info = _lu_inplace(ar, pv, thresh)
    return lu, piv, int(info)


def lu_solve(lu, piv, b):
    """Solve with a packed factorization; ``b`` is 2-D (n, nrhs)."""
    cdef double[:, ::1] lr, br
    cdef double complex[:, ::1] lc, bc
    cdef Py_ssize_t[::1] pv = np.ascontiguousarray(piv, dtype=np.intp)
    if np.iscomplexobj(lu) or np.iscomplexobj(b):
        lu = np.ascontiguousarray(lu, dtype=np.complex128)
        x = np.array(b, dtype=np.complex128, order="C", copy=True)
        lc = lu
        bc = x
        _lu_solve_inplace(lc, pv, bc)
    else:
        lu = np.ascontiguousarray(lu, dtype=np.float64)
        x = np.array(b, dtype=np.float64, order="C", copy=True)
        lr = lu
        br = x
        _lu_solve_inplace(lr, pv, br)
    return x


cdef void _hessenberg(double complex[:, ::1] h, double complex[::1] v) noexcept nogil:
    """Householder reduction to upper Hessenberg form, in place."""
    cdef Py_ssize_t n = h.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double xnorm, vnorm2, ax0
    cdef double complex alpha, s, x0
    for k in range(n - 2):
        xnorm = 0.0
        for i in range(k + 1, n):
            xnorm = hypot(xnorm, _cabs(h[i, k]))
        if xnorm == 0.0:
            continue
        x0 = h[k + 1, k]
        ax0 = _cabs(x0)
        if ax0 == 0.0:
            alpha = -xnorm
        else:
            alpha = -(x0 / ax0) * xnorm
        vnorm2 = 0.0
        for i in range(k + 1, n):
            v[i] = h[i, k]
        v[k + 1] = v[k + 1] - alpha
        for i in range(k + 1, n):
            vnorm2 += v[i].real * v[i].real + v[i].imag * v[i].imag
        if vnorm2 == 0.0:
            continue
        # H <- (I - 2vv*/v*v) H
        for j in range(k, n):
            s = 0.0
            for i in range(k + 1, n):
                s = s + v[i].conjugate() * h[i, j]
            s = 2.0 * s / vnorm2
            for i in range(k + 1, n):
                h[i, j] = h[i, j] - v[i] * s
        # H <- H (I - 2vv*/v*v)
        for i in range(n):
            s = 0.0
            for j in range(k + 1, n):
                s = s + h[i, j] * v[j]
            s = 2.0 * s / vnorm2
            for j in range(k + 1, n):
                h[i, j] = h[i, j] - s * v[j].conjugate()
        for i in range(k + 2, n):
            h[i, k] = 0.0


cdef Py_ssize_t _hqr(double complex[:, ::1] h, double complex[::1] w,
                     double[::1] cs, double complex[::1] sn,
                     double tol, Py_ssize_t maxit) noexcept nogil:
    """Shifted complex QR on a Hessenberg matrix. Returns 0 on success."""
    cdef Py_ssize_t n = h.shape[0]
    cdef Py_ssize_t hi = n - 1
    cdef Py_ssize_t lo, i, j, jmax, total = 0, since = 0
    cdef double s, r, aa
    cdef double complex a, b, c, d, tr, det, disc, mu1, mu2, mu, x, y, g
    cdef double hnorm = 0.0
    for i in range(n):
        for j in range(n):
            hnorm = hypot(hnorm, _cabs(h[i, j]))
    while hi >= 0:
        if hi == 0:
            w[0] = h[0, 0]
            hi = -1
            continue
        lo = hi
        while lo > 0:
            s = _cabs(h[lo - 1, lo - 1]) + _cabs(h[lo, lo])
            if s == 0.0:
                s = hnorm
            if _cabs(h[lo, lo - 1]) <= tol * s:
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            w[hi] = h[hi, hi]
            hi -= 1
            since = 0
            continue
        if lo == hi - 1:
            # 2x2 window: closed form (QR stalls on near-double roots)
            a = h[lo, lo]
            b = h[lo, hi]
            c = h[hi, lo]
            d = h[hi, hi]
            tr = 0.5 * (a - d)
            disc = _csqrt(tr * tr + b * c)
            w[lo] = 0.5 * (a + d) + disc
            w[hi] = 0.5 * (a + d) - disc
            hi -= 2
            since = 0
            continue
        total += 1
        since += 1
        if total > maxit:
            return 1
        a = h[hi - 1, hi - 1]
        b = h[hi - 1, hi]
        c = h[hi, hi - 1]
        d = h[hi, hi]
        if since % 11 == 10:
            mu = d + 0.75 * _cabs(c)
        else:
            tr = 0.5 * (a + d)
            det = a * d - b * c
            disc = _csqrt(tr * tr - det)
            mu1 = tr + disc
            mu2 = tr - disc
            if _cabs(mu1 - d) <= _cabs(mu2 - d):
                mu = mu1
            else:
                mu = mu2
        for i in range(lo, hi + 1):
            h[i, i] = h[i, i] - mu
        for i in range(lo, hi):
            x = h[i, i]
            y = h[i + 1, i]
            aa = _cabs(x)
            r = hypot(aa, _cabs(y))
            if r == 0.0:
                cs[i] = 1.0
                sn[i] = 0.0
                continue
            if aa == 0.0:
                cs[i] = 0.0
                sn[i] = y.conjugate() / r
            else:
                cs[i] = aa / r
                sn[i] = (x / aa) * y.conjugate() / r
            for j in range(i, hi + 1):
                x = h[i, j]
                y = h[i + 1, j]
                h[i, j] = cs[i] * x + sn[i] * y
                h[i + 1, j] = -sn[i].conjugate() * x + cs[i] * y
        for i in range(lo, hi):
            jmax = i + 2 if i + 2 <= hi else hi
            for j in range(lo, jmax + 1):
                x = h[j, i]
                y = h[j, i + 1]
                h[j, i] = x * cs[i] + y * sn[i].conjugate()
                h[j, i + 1] = -x * sn[i] + y * cs[i]
        for i in range(lo, hi + 1):
            h[i, i] = h[i, i] + mu
    return 0


def eigvals(a, double tol, Py_ssize_t maxit):
    """Eigenvalues of a square matrix (complex128 result). Returns ``(w, info)``."""
    h = np.array(a, dtype=np.complex128, order="C", copy=True)
    n = h.shape[0]
    w = np.zeros(n, dtype=np.complex128)
    cdef double complex[:, ::1] hv = h
    cdef double complex[::1] wv = w
    cdef double complex[::1] v = np.zeros(n, dtype=np.complex128)
    cdef double[::1] cs = np.zeros(n, dtype=np.float64)
    cdef double complex[::1] sn = np.zeros(n, dtype=np.complex128)
    cdef Py_ssize_t info
    with nogil:
        _hessenberg(hv, v)
        info = _hqr(hv, wv, cs, sn, tol, maxit)
    return w, int(info)


def stability_radii(A, U, qs, double rel_tol, double tol, Py_ssize_t maxit):
    """Spectral radius of ``(I - qA)^{-1} U`` for each ``q``; ``inf`` where
    ``I - qA`` is numerically singular, ``nan`` where QR failed."""
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    qarr = np.ascontiguousarray(np.ravel(qs), dtype=np.complex128)
    cdef double complex[::1] qv = qarr
    cdef Py_ssize_t n = Av.shape[0]
    cdef Py_ssize_t npts = qv.shape[0]
    out = np.empty(npts, dtype=np.float64)
    cdef double[::1] ov = out
    m = np.zeros((n, n), dtype=np.complex128)
    r = np.zeros((n, n), dtype=np.complex128)
    cdef double complex[:, ::1] mv = m
    cdef double complex[:, ::1] rv = r
    cdef Py_ssize_t[::1] piv = np.zeros(n, dtype=np.intp)
    cdef double complex[::1] w = np.zeros(n, dtype=np.complex128)
    cdef double complex[::1] v = np.zeros(n, dtype=np.complex128)
    cdef double[::1] cs = np.zeros(n, dtype=np.float64)
    cdef double complex[::1] sn = np.zeros(n, dtype=np.complex128)
    cdef Py_ssize_t p, i, j, info
    cdef double complex q
    cdef double best, thresh, amax
    with nogil:
        for p in range(npts):
            q = qv[p]
            amax = 0.0
            for i in range(n):
                for j in range(n):
                    mv[i, j] = -q * Av[i, j]
                    if i == j:
                        mv[i, j] = mv[i, j] + 1.0
                    if _cabs(mv[i, j]) > amax:
                        amax = _cabs(mv[i, j])
                    rv[i, j] = Uv[i, j]
            thresh = rel_tol * amax
            info = _lu_inplace(mv, piv, thresh)
            if info != 0:
                ov[p] = INFINITY
                continue
            _lu_solve_inplace(mv, piv, rv)
            _hessenberg(rv, v)
            info = _hqr(rv, w, cs, sn, tol, maxit)
            if info != 0:
                ov[p] = NAN
                continue
            best = 0.0
            for i in range(n):
                if _cabs(w[i]) > best:
                    best = _cabs(w[i])
            ov[p] = best
    return out
