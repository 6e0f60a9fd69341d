# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels (same contracts as ``_kernels_py``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, sqrt, floor, ceil, fabs

cnp.import_array()

cdef int NEWTON_MAXITER = 20
cdef double EDGE_EPS = 1e-12


cdef inline bint _inside(double s0, double s1) noexcept nogil:
    return s0 >= -EDGE_EPS and s0 < 1.0 - EDGE_EPS and s1 >= -EDGE_EPS and s1 < 1.0 - EDGE_EPS


cdef bint _triangles(double[:, :, ::1] C, Py_ssize_t c, double x, double y,
                     double* s0, double* s1) noexcept nogil:
    cdef double ax, ay, bx, by, rx, ry, det, l1, l2
    cdef int t
    for t in range(2):
        if t == 0:
            ax = C[c, 1, 0] - C[c, 0, 0]; ay = C[c, 1, 1] - C[c, 0, 1]
            bx = C[c, 3, 0] - C[c, 0, 0]; by = C[c, 3, 1] - C[c, 0, 1]
        else:
            ax = C[c, 3, 0] - C[c, 0, 0]; ay = C[c, 3, 1] - C[c, 0, 1]
            bx = C[c, 2, 0] - C[c, 0, 0]; by = C[c, 2, 1] - C[c, 0, 1]
        rx = x - C[c, 0, 0]; ry = y - C[c, 0, 1]
        det = ax * by - ay * bx
        if det == 0:
            continue
        l1 = (rx * by - ry * bx) / det
        l2 = (ax * ry - ay * rx) / det
        if l1 >= -EDGE_EPS and l2 >= -EDGE_EPS and l1 + l2 <= 1 + EDGE_EPS:
            if t == 0:
                s0[0] = l1 + l2; s1[0] = l2
            else:
                s0[0] = l1; s1[0] = l1 + l2
            return True
    return False


def locate_preimages(corners, double ox, double oy, double hex_, double hey,
                     Py_ssize_t mx, Py_ssize_t my):
    cdef double[:, :, ::1] C = np.ascontiguousarray(corners, dtype=np.float64)
    cdef Py_ssize_t nc = C.shape[0]
    cdef Py_ssize_t c, i, j, k, total = 0, n = 0
    cdef Py_ssize_t ilo, ihi, jlo, jhi
    cdef double xmin, xmax, ymin, ymax, v
    cdef double ax, ay, bx, by, cx, cy, dx, dy
    cdef double x, y, s0, s1, j1x, j1y, j2x, j2y, det, rx, ry, d0, d1, scale
    cdef bint conv, hit
    cdef int it

    cdef cnp.int64_t[:, ::1] box = np.empty((nc, 4), dtype=np.int64)
    for c in range(nc):
        xmin = C[c, 0, 0]; xmax = xmin; ymin = C[c, 0, 1]; ymax = ymin
        for k in range(1, 4):
            v = C[c, k, 0]
            if v < xmin: xmin = v
            if v > xmax: xmax = v
            v = C[c, k, 1]
            if v < ymin: ymin = v
            if v > ymax: ymax = v
        ilo = <Py_ssize_t>ceil((xmin - ox) / hex_ - 0.5)
        ihi = <Py_ssize_t>floor((xmax - ox) / hex_ - 0.5)
        jlo = <Py_ssize_t>ceil((ymin - oy) / hey - 0.5)
        jhi = <Py_ssize_t>floor((ymax - oy) / hey - 0.5)
        if ilo < 0: ilo = 0
        if jlo < 0: jlo = 0
        if ihi > mx - 1: ihi = mx - 1
        if jhi > my - 1: jhi = my - 1
        box[c, 0] = ilo; box[c, 1] = ihi; box[c, 2] = jlo; box[c, 3] = jhi
        if ihi >= ilo and jhi >= jlo:
            total += (ihi - ilo + 1) * (jhi - jlo + 1)

    pt_arr = np.empty(total, dtype=np.int64)
    cell_arr = np.empty(total, dtype=np.int64)
    s_arr = np.empty((total, 2), dtype=np.float64)
    cdef cnp.int64_t[::1] PT = pt_arr
    cdef cnp.int64_t[::1] CE = cell_arr
    cdef double[:, ::1] S = s_arr

    for c in range(nc):
        ax = C[c, 0, 0]; ay = C[c, 0, 1]
        bx = C[c, 1, 0] - ax; by = C[c, 1, 1] - ay
        cx = C[c, 2, 0] - ax; cy = C[c, 2, 1] - ay
        dx = C[c, 3, 0] - C[c, 1, 0] - C[c, 2, 0] + ax
        dy = C[c, 3, 1] - C[c, 1, 1] - C[c, 2, 1] + ay
        scale = 1.0
        for k in range(4):
            if fabs(C[c, k, 0]) + 1.0 > scale: scale = fabs(C[c, k, 0]) + 1.0
            if fabs(C[c, k, 1]) + 1.0 > scale: scale = fabs(C[c, k, 1]) + 1.0
        for j in range(box[c, 2], box[c, 3] + 1):
            y = oy + (j + 0.5) * hey
            for i in range(box[c, 0], box[c, 1] + 1):
                x = ox + (i + 0.5) * hex_
                s0 = 0.5; s1 = 0.5
                conv = False
                for it in range(NEWTON_MAXITER):
                    j1x = bx + dx * s1; j1y = by + dy * s1
                    j2x = cx + dx * s0; j2y = cy + dy * s0
                    det = j1x * j2y - j1y * j2x
                    if det == 0:
                        break
                    rx = x - (ax + bx * s0 + cx * s1 + dx * s0 * s1)
                    ry = y - (ay + by * s0 + cy * s1 + dy * s0 * s1)
                    d0 = (rx * j2y - ry * j2x) / det
                    d1 = (j1x * ry - j1y * rx) / det
                    s0 += d0; s1 += d1
                    if fabs(d0) < 1e-15 and fabs(d1) < 1e-15:
                        conv = True
                        break
                if not conv:
                    rx = x - (ax + bx * s0 + cx * s1 + dx * s0 * s1)
                    ry = y - (ay + by * s0 + cy * s1 + dy * s0 * s1)
                    if fabs(rx) <= 1e-13 * scale and fabs(ry) <= 1e-13 * scale and s0 == s0 and s1 == s1:
                        conv = True
                if conv:
                    hit = _inside(s0, s1)
                else:
                    hit = _triangles(C, c, x, y, &s0, &s1) and _inside(s0, s1)
                if hit:
                    PT[n] = j * mx + i
                    CE[n] = c
                    S[n, 0] = s0; S[n, 1] = s1
                    n += 1
    pt_arr = pt_arr[:n]; cell_arr = cell_arr[:n]; s_arr = s_arr[:n]
    order = np.lexsort((cell_arr, pt_arr))
    return pt_arr[order], cell_arr[order], s_arr[order]


def winding_numbers(poly, pts):
    cdef double[:, ::1] P = np.ascontiguousarray(poly, dtype=np.float64)
    cdef double[:, ::1] X = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0] - 1, m = X.shape[0], k, q
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] O = out
    cdef double ux, uy, vx, vy, acc, px, py
    for q in range(m):
        px = X[q, 0]; py = X[q, 1]
        acc = 0.0
        for k in range(n):
            ux = P[k, 0] - px; uy = P[k, 1] - py
            vx = P[k + 1, 0] - px; vy = P[k + 1, 1] - py
            acc += atan2(ux * vy - uy * vx, ux * vx + uy * vy)
        O[q] = acc / (2.0 * 3.141592653589793)
    return out


def polyline_distance(poly, pts):
    cdef double[:, ::1] P = np.ascontiguousarray(poly, dtype=np.float64)
    cdef double[:, ::1] X = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0] - 1, m = X.shape[0], k, q
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] O = out
    cdef double ex, ey, ee, rx, ry, lam, ddx, ddy, best, d2
    for q in range(m):
        best = 1e308
        for k in range(n):
            ex = P[k + 1, 0] - P[k, 0]; ey = P[k + 1, 1] - P[k, 1]
            rx = X[q, 0] - P[k, 0]; ry = X[q, 1] - P[k, 1]
            ee = ex * ex + ey * ey
            if ee > 0:
                lam = (rx * ex + ry * ey) / ee
                if lam < 0: lam = 0
                elif lam > 1: lam = 1
            else:
                lam = 0
            ddx = rx - lam * ex; ddy = ry - lam * ey
            d2 = ddx * ddx + ddy * ddy
            if d2 < best: best = d2
        O[q] = sqrt(best)
    return out


def laplacian_apply(u, double hx, double hy):
    cdef double[:, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t my = U.shape[0], mx = U.shape[1], i, j
    out = np.empty((my, mx), dtype=np.float64)
    cdef double[:, ::1] O = out
    cdef double cx = hy / hx, cy = hx / hy, left, right, down, up, c
    for j in range(my):
        for i in range(mx):
            c = U[j, i]
            left = U[j, i - 1] if i > 0 else -c
            right = U[j, i + 1] if i < mx - 1 else -c
            down = U[j - 1, i] if j > 0 else -c
            up = U[j + 1, i] if j < my - 1 else -c
            O[j, i] = cx * (2.0 * c - left - right) + cy * (2.0 * c - down - up)
    return out


cdef inline void _bspline(double r, double* w, double* dw) noexcept nogil:
    cdef double a = fabs(r)
    if a <= 0.5:
        w[0] = 0.75 - a * a
        dw[0] = -2.0 * r
    elif a < 1.5:
        w[0] = 0.5 * (1.5 - a) * (1.5 - a)
        dw[0] = -(1.5 - a) if r > 0 else (1.5 - a)
    else:
        w[0] = 0.0
        dw[0] = 0.0


def bspline_deposit(pts, vals, double ox, double oy, double hx, double hy, Py_ssize_t mx, Py_ssize_t my):
    cdef double[:, ::1] P = np.ascontiguousarray(pts, dtype=np.float64)
    cdef double[:, ::1] V = np.ascontiguousarray(vals, dtype=np.float64)
    out_arr = np.zeros((mx * my, 2))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n = P.shape[0], p, a, b, i0, j0, k
    cdef double u, v, wx[3], wy[3], d, w
    with nogil:
        for p in range(n):
            u = (P[p, 0] - ox) / hx - 0.5
            v = (P[p, 1] - oy) / hy - 0.5
            i0 = <Py_ssize_t>floor(u + 0.5)
            j0 = <Py_ssize_t>floor(v + 0.5)
            for a in range(3):
                _bspline(u - (i0 + a - 1), &wx[a], &d)
                _bspline(v - (j0 + a - 1), &wy[a], &d)
            for b in range(3):
                for a in range(3):
                    k = (j0 + b - 1) * mx + (i0 + a - 1)
                    w = wy[b] * wx[a]
                    out[k, 0] += w * V[p, 0]
                    out[k, 1] += w * V[p, 1]
    return out_arr


def bspline_deposit_adjoint(pts, z, zp, gm, double ox, double oy, double hx, double hy,
                            Py_ssize_t mx, Py_ssize_t my):
    cdef double[:, ::1] P = np.ascontiguousarray(pts, dtype=np.float64)
    cdef double[:, ::1] Z = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] ZP = np.ascontiguousarray(zp, dtype=np.float64)
    cdef double[:, ::1] G = np.ascontiguousarray(np.reshape(gm, (-1, 2)), dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], p, a, b, i0, j0, k
    dp_arr = np.zeros((n, 2))
    gth_arr = np.zeros(n)
    cdef double[:, ::1] dp = dp_arr
    cdef double[::1] gth = gth_arr
    cdef double u, v, wx[3], wy[3], dwx[3], dwy[3], gz, gzp
    with nogil:
        for p in range(n):
            u = (P[p, 0] - ox) / hx - 0.5
            v = (P[p, 1] - oy) / hy - 0.5
            i0 = <Py_ssize_t>floor(u + 0.5)
            j0 = <Py_ssize_t>floor(v + 0.5)
            for a in range(3):
                _bspline(u - (i0 + a - 1), &wx[a], &dwx[a])
                _bspline(v - (j0 + a - 1), &wy[a], &dwy[a])
            for b in range(3):
                for a in range(3):
                    k = (j0 + b - 1) * mx + (i0 + a - 1)
                    gz = G[k, 0] * Z[p, 0] + G[k, 1] * Z[p, 1]
                    gzp = G[k, 0] * ZP[p, 0] + G[k, 1] * ZP[p, 1]
                    gth[p] += wy[b] * wx[a] * gzp
                    dp[p, 0] += wy[b] * dwx[a] * gz / hx
                    dp[p, 1] += dwy[b] * wx[a] * gz / hy
    return dp_arr, gth_arr
