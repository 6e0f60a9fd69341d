"""Pure numpy implementations of the hot kernels.

These are the fallback used when the compiled ``_core`` extension is not
available; both expose identical signatures and return identical layouts.
"""

from __future__ import annotations

import numpy as np

NEWTON_MAXITER = 20
_EDGE_EPS = 1e-12
_CHUNK = 1 << 20


def _bilinear_coeffs(corners):
    c00, c10, c01, c11 = corners[:, 0], corners[:, 1], corners[:, 2], corners[:, 3]
    return c00, c10 - c00, c01 - c00, c11 - c10 - c01 + c00


def _triangle_fallback(corners, xi):
    """Locate ``xi`` in the two triangles (00,10,11) and (00,11,01).

    Returns local coordinates of the affine approximation and an
    ``inside`` mask; used only where Newton did not converge.
    """
    c00, c10, c01, c11 = corners[:, 0], corners[:, 1], corners[:, 2], corners[:, 3]
    s = np.full((len(xi), 2), np.nan)
    inside = np.zeros(len(xi), dtype=bool)
    for p1, p2, e1, e2 in ((c10, c11, (1.0, 0.0), (1.0, 1.0)), (c11, c01, (1.0, 1.0), (0.0, 1.0))):
        a = p1 - c00
        b = p2 - c00
        r = xi - c00
        det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        ok = np.abs(det) > 0
        det = np.where(ok, det, 1.0)
        l1 = (r[:, 0] * b[:, 1] - r[:, 1] * b[:, 0]) / det
        l2 = (a[:, 0] * r[:, 1] - a[:, 1] * r[:, 0]) / det
        hit = ok & (l1 >= -_EDGE_EPS) & (l2 >= -_EDGE_EPS) & (l1 + l2 <= 1 + _EDGE_EPS) & ~inside
        s[hit, 0] = l1[hit] * e1[0] + l2[hit] * e2[0]
        s[hit, 1] = l1[hit] * e1[1] + l2[hit] * e2[1]
        inside |= hit
    return s, inside


def locate_preimages(corners, ox, oy, hex_, hey, mx, my):
    """Find every (Eulerian cell center, reference cell) incidence.

    ``corners`` has shape (nc, 4, 2) in the order (s1,s2) = (0,0), (1,0),
    (0,1), (1,1).  Returns ``(pt, cell, s)`` sorted by point then cell,
    where ``pt`` is the flat Eulerian index ``j*mx + i`` and ``s`` the local
    coordinates of the preimage inside ``cell``.
    """
    corners = np.ascontiguousarray(corners, dtype=np.float64)
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)
    i_lo = np.maximum(np.ceil((lo[:, 0] - ox) / hex_ - 0.5), 0).astype(np.int64)
    i_hi = np.minimum(np.floor((hi[:, 0] - ox) / hex_ - 0.5), mx - 1).astype(np.int64)
    j_lo = np.maximum(np.ceil((lo[:, 1] - oy) / hey - 0.5), 0).astype(np.int64)
    j_hi = np.minimum(np.floor((hi[:, 1] - oy) / hey - 0.5), my - 1).astype(np.int64)
    ni = np.maximum(i_hi - i_lo + 1, 0)
    nj = np.maximum(j_hi - j_lo + 1, 0)
    counts = ni * nj
    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), np.zeros((0, 2))
    cell = np.repeat(np.arange(len(corners), dtype=np.int64), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total, dtype=np.int64) - start
    ii = i_lo[cell] + local % ni[cell]
    jj = j_lo[cell] + local // ni[cell]
    xi = np.stack([ox + (ii + 0.5) * hex_, oy + (jj + 0.5) * hey], axis=1)

    a, b, c, d = _bilinear_coeffs(corners[cell])
    s = np.full((total, 2), 0.5)
    converged = np.zeros(total, dtype=bool)
    for _ in range(NEWTON_MAXITER):
        j1 = b + d * s[:, 1:2]
        j2 = c + d * s[:, 0:1]
        det = j1[:, 0] * j2[:, 1] - j1[:, 1] * j2[:, 0]
        res = xi - (a + b * s[:, 0:1] + c * s[:, 1:2] + d * (s[:, 0:1] * s[:, 1:2]))
        safe = np.where(det != 0, det, 1.0)
        ds0 = (res[:, 0] * j2[:, 1] - res[:, 1] * j2[:, 0]) / safe
        ds1 = (j1[:, 0] * res[:, 1] - j1[:, 1] * res[:, 0]) / safe
        ds0 = np.where(converged | (det == 0), 0.0, ds0)
        ds1 = np.where(converged | (det == 0), 0.0, ds1)
        s[:, 0] += ds0
        s[:, 1] += ds1
        converged |= (np.maximum(np.abs(ds0), np.abs(ds1)) < 1e-15) & (det != 0)
        if converged.all():
            break
    # a bounded residual also counts as converged
    res = xi - (a + b * s[:, 0:1] + c * s[:, 1:2] + d * (s[:, 0:1] * s[:, 1:2]))
    scale = np.abs(corners[cell]).max(axis=(1, 2)) + 1.0
    converged |= np.abs(res).max(axis=1) <= 1e-13 * scale
    inside = converged & np.all((s >= -_EDGE_EPS) & (s < 1.0 - _EDGE_EPS), axis=1)
    bad = ~converged
    if bad.any():
        sf, inf = _triangle_fallback(corners[cell[bad]], xi[bad])
        s[bad] = sf
        inside[bad] = inf & np.all((sf >= -_EDGE_EPS) & (sf < 1.0 - _EDGE_EPS), axis=1)
    pt = jj * mx + ii
    pt, cell, s = pt[inside], cell[inside], s[inside]
    order = np.lexsort((cell, pt))
    return pt[order], cell[order], s[order]


def winding_numbers(poly, pts):
    """Total signed angle of the closed polyline around each point, over 2*pi."""
    poly = np.asarray(poly, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    a = poly[:-1]
    b = poly[1:]
    out = np.empty(len(pts))
    step = max(1, _CHUNK // max(len(a), 1))
    for k in range(0, len(pts), step):
        p = pts[k:k + step, None, :]
        u = a[None] - p
        v = b[None] - p
        cross = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
        dot = u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1]
        out[k:k + step] = np.arctan2(cross, dot).sum(axis=1)
    return out / (2.0 * np.pi)


def polyline_distance(poly, pts):
    """Minimum Euclidean distance from each point to the polyline segments."""
    poly = np.asarray(poly, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    a = poly[:-1]
    e = poly[1:] - a
    ee = np.einsum("ij,ij->i", e, e)
    ee = np.where(ee > 0, ee, 1.0)
    out = np.empty(len(pts))
    step = max(1, _CHUNK // max(len(a), 1))
    for k in range(0, len(pts), step):
        r = pts[k:k + step, None, :] - a[None]
        lam = np.clip((r[..., 0] * e[None, :, 0] + r[..., 1] * e[None, :, 1]) / ee, 0.0, 1.0)
        dx = r[..., 0] - lam * e[None, :, 0]
        dy = r[..., 1] - lam * e[None, :, 1]
        out[k:k + step] = np.sqrt((dx * dx + dy * dy).min(axis=1))
    return out


def laplacian_apply(u, hx, hy):
    """Apply hx*hy*(-Laplacian) with zero-Dirichlet ghost cells to ``u`` (my, mx)."""
    u = np.asarray(u, dtype=np.float64)
    cx = hy / hx
    cy = hx / hy
    out = 2.0 * (cx + cy) * u
    out[:, 1:] -= cx * u[:, :-1]
    out[:, :-1] -= cx * u[:, 1:]
    out[1:, :] -= cy * u[:-1, :]
    out[:-1, :] -= cy * u[1:, :]
    out[:, 0] += cx * u[:, 0]
    out[:, -1] += cx * u[:, -1]
    out[0, :] += cy * u[0, :]
    out[-1, :] += cy * u[-1, :]
    return out


def _bspline2(r):
    """Quadratic B-spline and its derivative."""
    a = np.abs(r)
    inner = a <= 0.5
    outer = (a > 0.5) & (a < 1.5)
    w = np.where(inner, 0.75 - a * a, np.where(outer, 0.5 * (1.5 - a) ** 2, 0.0))
    dw = np.where(inner, -2.0 * r, np.where(outer, -np.sign(r) * (1.5 - a), 0.0))
    return w, dw


def _stencil(pts, ox, oy, hx, hy, mx):
    u = (pts[:, 0] - ox) / hx - 0.5
    v = (pts[:, 1] - oy) / hy - 0.5
    off = np.arange(-1, 2)
    ii = np.floor(u + 0.5).astype(np.int64)[:, None] + off[None]
    jj = np.floor(v + 0.5).astype(np.int64)[:, None] + off[None]
    wx, dwx = _bspline2(u[:, None] - ii)
    wy, dwy = _bspline2(v[:, None] - jj)
    idx = jj[:, :, None] * mx + ii[:, None, :]
    return idx, wx, dwx / hx, wy, dwy / hy


def bspline_deposit(pts, vals, ox, oy, hx, hy, mx, my):
    """Spread point values (n, 2) onto cells with tensor quadratic B-splines -> (my*mx, 2).

    Points must keep two cells from the box edge.
    """
    pts = np.asarray(pts, dtype=np.float64)
    vals = np.asarray(vals, dtype=np.float64)
    idx, wx, _, wy, _ = _stencil(pts, ox, oy, hx, hy, mx)
    w = wy[:, :, None] * wx[:, None, :]
    flat = idx.ravel()
    out = np.zeros((mx * my, 2))
    for k in range(2):
        out[:, k] = np.bincount(flat, (w * vals[:, k, None, None]).ravel(), mx * my)
    return out


def bspline_deposit_adjoint(pts, z, zp, gm, ox, oy, hx, hy, mx, my):
    """For each point: sum_w grad(w) (gm . z) -> (n, 2) and sum_w w (gm . zp) -> (n,)."""
    pts = np.asarray(pts, dtype=np.float64)
    idx, wx, dwx, wy, dwy = _stencil(pts, ox, oy, hx, hy, mx)
    gme = np.asarray(gm, dtype=np.float64).reshape(-1, 2)[idx]
    gz = gme[..., 0] * z[:, 0, None, None] + gme[..., 1] * z[:, 1, None, None]
    gzp = gme[..., 0] * zp[:, 0, None, None] + gme[..., 1] * zp[:, 1, None, None]
    gth = np.sum(gzp * (wy[:, :, None] * wx[:, None, :]), axis=(1, 2))
    dpx = np.sum(gz * (wy[:, :, None] * dwx[:, None, :]), axis=(1, 2))
    dpy = np.sum(gz * (dwy[:, :, None] * wx[:, None, :]), axis=(1, 2))
    return np.stack([dpx, dpy], axis=1), gth
