"""Pure-Python twin of the compiled ``_kernels`` extension.

Used when the extension is not built (or ``BLENDED_GBDF_PURE=1``). The
algorithms are step-for-step the same as in ``_kernels.pyx``; only the data
lives in Python lists.
"""
import cmath
import math

import numpy as np


def _lu_rows(a, piv, thresh):
    n = len(a)
    for k in range(n):
        p = k
        best = abs(a[k][k])
        for i in range(k + 1, n):
            v = abs(a[i][k])
            if v > best:
                best = v
                p = i
        piv[k] = p
        if best <= thresh:
            return k + 1
        if p != k:
            a[k], a[p] = a[p], a[k]
        rowk = a[k]
        pivot = rowk[k]
        for i in range(k + 1, n):
            rowi = a[i]
            rowi[k] = rowi[k] / pivot
            l = rowi[k]
            if l != 0:
                for j in range(k + 1, n):
                    rowi[j] -= l * rowk[j]
    return 0


def _lu_solve_rows(lu, piv, b):
    n = len(lu)
    nrhs = len(b[0]) if n else 0
    for k in range(n):
        p = piv[k]
        if p != k:
            b[k], b[p] = b[p], b[k]
    for k in range(n):
        bk = b[k]
        for i in range(k + 1, n):
            l = lu[i][k]
            if l != 0:
                bi = b[i]
                for j in range(nrhs):
                    bi[j] -= l * bk[j]
    for k in range(n - 1, -1, -1):
        bk = b[k]
        d = lu[k][k]
        for j in range(nrhs):
            bk[j] = bk[j] / d
        for i in range(k):
            l = lu[i][k]
            if l != 0:
                bi = b[i]
                for j in range(nrhs):
                    bi[j] -= l * bk[j]


def _to_rows(a, complex_):
    conv = complex if complex_ else float
    return [[conv(x) for x in row] for row in np.asarray(a)]


def lu_factor(a, rel_tol):
    arr = np.asarray(a)
    cplx = np.iscomplexobj(arr)
    rows = _to_rows(arr, cplx)
    n = len(rows)
    piv = [0] * n
    thresh = rel_tol * (max(abs(x) for row in rows for x in row) if n else 0.0)
    info = _lu_rows(rows, piv, thresh)
    dtype = np.complex128 if cplx else np.float64
    return np.array(rows, dtype=dtype).reshape(n, n), np.array(piv, dtype=np.intp), info


def lu_solve(lu, piv, b):
    cplx = np.iscomplexobj(lu) or np.iscomplexobj(b)
    lrows = _to_rows(lu, cplx)
    brows = _to_rows(b, cplx)
    _lu_solve_rows(lrows, [int(p) for p in piv], brows)
    dtype = np.complex128 if cplx else np.float64
    return np.array(brows, dtype=dtype).reshape(np.shape(b))


def _csqrt(w):
    return cmath.sqrt(w)


def _hessenberg(h):
    n = len(h)
    for k in range(n - 2):
        xnorm = 0.0
        for i in range(k + 1, n):
            xnorm = math.hypot(xnorm, abs(h[i][k]))
        if xnorm == 0.0:
            continue
        x0 = h[k + 1][k]
        ax0 = abs(x0)
        alpha = -xnorm if ax0 == 0.0 else -(x0 / ax0) * xnorm
        v = [0j] * n
        for i in range(k + 1, n):
            v[i] = h[i][k]
        v[k + 1] -= alpha
        vnorm2 = sum(v[i].real ** 2 + v[i].imag ** 2 for i in range(k + 1, n))
        if vnorm2 == 0.0:
            continue
        for j in range(k, n):
            s = 0j
            for i in range(k + 1, n):
                s += v[i].conjugate() * h[i][j]
            s = 2.0 * s / vnorm2
            for i in range(k + 1, n):
                h[i][j] -= v[i] * s
        for i in range(n):
            row = h[i]
            s = 0j
            for j in range(k + 1, n):
                s += row[j] * v[j]
            s = 2.0 * s / vnorm2
            for j in range(k + 1, n):
                row[j] -= s * v[j].conjugate()
        for i in range(k + 2, n):
            h[i][k] = 0j


def _hqr(h, tol, maxit):
    n = len(h)
    w = [0j] * n
    cs = [0.0] * n
    sn = [0j] * n
    hnorm = 0.0
    for row in h:
        for x in row:
            hnorm = math.hypot(hnorm, abs(x))
    hi = n - 1
    total = 0
    since = 0
    while hi >= 0:
        if hi == 0:
            w[0] = h[0][0]
            break
        lo = hi
        while lo > 0:
            s = abs(h[lo - 1][lo - 1]) + abs(h[lo][lo])
            if s == 0.0:
                s = hnorm
            if abs(h[lo][lo - 1]) <= tol * s:
                h[lo][lo - 1] = 0j
                break
            lo -= 1
        if lo == hi:
            w[hi] = h[hi][hi]
            hi -= 1
            since = 0
            continue
        if lo == hi - 1:
            # 2x2 window: closed form (QR stalls on near-double roots)
            a, b = h[lo][lo], h[lo][hi]
            c, d = h[hi][lo], h[hi][hi]
            half = 0.5 * (a - d)
            disc = _csqrt(half * half + b * c)
            w[lo] = 0.5 * (a + d) + disc
            w[hi] = 0.5 * (a + d) - disc
            hi -= 2
            since = 0
            continue
        total += 1
        since += 1
        if total > maxit:
            return w, 1
        a, b = h[hi - 1][hi - 1], h[hi - 1][hi]
        c, d = h[hi][hi - 1], h[hi][hi]
        if since % 11 == 10:
            mu = d + 0.75 * abs(c)
        else:
            tr = 0.5 * (a + d)
            disc = _csqrt(tr * tr - (a * d - b * c))
            mu1, mu2 = tr + disc, tr - disc
            mu = mu1 if abs(mu1 - d) <= abs(mu2 - d) else mu2
        for i in range(lo, hi + 1):
            h[i][i] -= mu
        for i in range(lo, hi):
            x, y = h[i][i], h[i + 1][i]
            aa = abs(x)
            r = math.hypot(aa, abs(y))
            if r == 0.0:
                cs[i], sn[i] = 1.0, 0j
                continue
            if aa == 0.0:
                cs[i], sn[i] = 0.0, y.conjugate() / r
            else:
                cs[i], sn[i] = aa / r, (x / aa) * y.conjugate() / r
            ci, si = cs[i], sn[i]
            ri, rn = h[i], h[i + 1]
            for j in range(i, hi + 1):
                x, y = ri[j], rn[j]
                ri[j] = ci * x + si * y
                rn[j] = -si.conjugate() * x + ci * y
        for i in range(lo, hi):
            ci, si = cs[i], sn[i]
            jmax = min(i + 2, hi)
            for j in range(lo, jmax + 1):
                row = h[j]
                x, y = row[i], row[i + 1]
                row[i] = x * ci + y * si.conjugate()
                row[i + 1] = -x * si + y * ci
        for i in range(lo, hi + 1):
            h[i][i] += mu
    return w, 0


def eigvals(a, tol, maxit):
    h = _to_rows(a, True)
    _hessenberg(h)
    w, info = _hqr(h, tol, maxit)
    return np.array(w, dtype=np.complex128), info


def stability_radii(A, U, qs, rel_tol, tol, maxit):
    A = _to_rows(A, False)
    U = _to_rows(U, False)
    n = len(A)
    qarr = np.ravel(np.asarray(qs, dtype=np.complex128))
    out = np.empty(qarr.size)
    for p, q in enumerate(qarr):
        q = complex(q)
        m = [[(1.0 if i == j else 0.0) - q * A[i][j] for j in range(n)] for i in range(n)]
        thresh = rel_tol * max(abs(x) for row in m for x in row)
        piv = [0] * n
        if _lu_rows(m, piv, thresh):
            out[p] = math.inf
            continue
        r = [[complex(x) for x in row] for row in U]
        _lu_solve_rows(m, piv, r)
        _hessenberg(r)
        w, info = _hqr(r, tol, maxit)
        out[p] = math.nan if info else max(abs(x) for x in w)
    return out
