"""Compiled inner loops (numba) shared by the grid, metrics, planner and sim.

Everything here works on raw arrays: ``heights``/``known`` are indexed
``[i, j]`` with ``i`` along world x and ``j`` along world y, and cell
``(i, j)`` is centred at ``origin + (i, j) * res``.
"""

import math

import numpy as np
from numba import njit

# Relative determinant floor below which a footprint fit is degenerate.
DET_EPS = 1e-12
# Relative radius slack so disk cells lying exactly on the circle are kept
# whatever the rounding of their centre coordinates.
DISK_SLACK = 1e-9


@njit(cache=True)
def bilinear_height(heights, known, ox, oy, res, x, y):
    rows, cols = heights.shape
    fx = (x - ox) / res
    fy = (y - oy) / res
    ci = math.floor(fx + 0.5)
    cj = math.floor(fy + 0.5)
    if ci < 0 or ci >= rows or cj < 0 or cj >= cols:
        return np.nan
    i0 = math.floor(fx)
    j0 = math.floor(fy)
    tx = fx - i0
    ty = fy - j0
    n_known = 0
    for di in range(2):
        for dj in range(2):
            i = i0 + di
            j = j0 + dj
            if 0 <= i < rows and 0 <= j < cols and known[i, j]:
                n_known += 1
    if n_known == 4:
        z00 = heights[i0, j0]
        z10 = heights[i0 + 1, j0]
        z01 = heights[i0, j0 + 1]
        z11 = heights[i0 + 1, j0 + 1]
        return ((1.0 - tx) * (1.0 - ty) * z00 + tx * (1.0 - ty) * z10
                + (1.0 - tx) * ty * z01 + tx * ty * z11)
    if n_known == 0:
        return np.nan
    best = np.inf
    val = np.nan
    for di in range(2):
        for dj in range(2):
            i = i0 + di
            j = j0 + dj
            if 0 <= i < rows and 0 <= j < cols and known[i, j]:
                d = (tx - di) ** 2 + (ty - dj) ** 2
                if d < best:
                    best = d
                    val = heights[i, j]
    return val


@njit(cache=True)
def bilinear_heights(heights, known, ox, oy, res, xs, ys):
    out = np.empty(xs.shape[0])
    for k in range(xs.shape[0]):
        out[k] = bilinear_height(heights, known, ox, oy, res, xs[k], ys[k])
    return out


@njit(cache=True)
def bilinear_field(field, ox, oy, res, xs, ys, outside):
    """Bilinear lookup of a fully defined field; ``outside`` beyond the grid."""
    rows, cols = field.shape
    out = np.empty(xs.shape[0])
    for k in range(xs.shape[0]):
        fx = (xs[k] - ox) / res
        fy = (ys[k] - oy) / res
        if fx < -0.5 or fy < -0.5 or fx >= rows - 0.5 or fy >= cols - 0.5:
            out[k] = outside
            continue
        fx = min(max(fx, 0.0), rows - 1.0)
        fy = min(max(fy, 0.0), cols - 1.0)
        i0 = min(int(fx), rows - 2) if rows > 1 else 0
        j0 = min(int(fy), cols - 2) if cols > 1 else 0
        tx = fx - i0
        ty = fy - j0
        i1 = min(i0 + 1, rows - 1)
        j1 = min(j0 + 1, cols - 1)
        out[k] = ((1.0 - tx) * (1.0 - ty) * field[i0, j0] + tx * (1.0 - ty) * field[i1, j0]
                  + (1.0 - tx) * ty * field[i0, j1] + tx * ty * field[i1, j1])
    return out


@njit(cache=True)
def footprint_fit(heights, known, ox, oy, res, x, y, r):
    """Least-squares plane over the known cells within ``r`` of (x, y).

    Returns (a, b, c, n, sigma, ok).  Moments are accumulated in one pass in
    coordinates centred on the query point (heights relative to the first
    sample) and the residual comes from the quadratic form.
    """
    rows, cols = heights.shape
    fx = (x - ox) / res
    fy = (y - oy) / res
    rr = r / res * (1.0 + DISK_SLACK)
    r2 = rr * rr
    n = 0
    z0 = 0.0
    sx = sy = sxx = sxy = syy = sz = sxz = syz = szz = 0.0
    i_lo = max(int(math.ceil(fx - rr)), 0)
    i_hi = min(int(math.floor(fx + rr)), rows - 1)
    for i in range(i_lo, i_hi + 1):
        du = i - fx
        rem = r2 - du * du
        if rem < 0.0:
            continue
        half = math.sqrt(rem)
        j_lo = max(int(math.ceil(fy - half)), 0)
        j_hi = min(int(math.floor(fy + half)), cols - 1)
        dx = du * res
        for j in range(j_lo, j_hi + 1):
            if not known[i, j]:
                continue
            dv = j - fy
            if du * du + dv * dv > r2:
                continue
            dy = dv * res
            if n == 0:
                z0 = heights[i, j]
            z = heights[i, j] - z0
            n += 1
            sx += dx
            sy += dy
            sxx += dx * dx
            sxy += dx * dy
            syy += dy * dy
            sz += z
            sxz += dx * z
            syz += dy * z
            szz += z * z
    if n < 3:
        return 0.0, 0.0, 0.0, n, 0.0, False
    # | sxx sxy sx | |a|   |sxz|
    # | sxy syy sy | |b| = |syz|
    # | sx  sy  n  | |c|   |sz |
    m00, m01, m02 = sxx, sxy, sx
    m11, m12, m22 = syy, sy, float(n)
    c00 = m11 * m22 - m12 * m12
    c01 = m02 * m12 - m01 * m22
    c02 = m01 * m12 - m02 * m11
    det = m00 * c00 + m01 * c01 + m02 * c02
    scale = max(m00 * m11 * m22, 1e-300)
    if abs(det) <= DET_EPS * scale:
        return 0.0, 0.0, 0.0, n, 0.0, False
    c11 = m00 * m22 - m02 * m02
    c12 = m01 * m02 - m00 * m12
    c22 = m00 * m11 - m01 * m01
    a = (c00 * sxz + c01 * syz + c02 * sz) / det
    b = (c01 * sxz + c11 * syz + c12 * sz) / det
    cl = (c02 * sxz + c12 * syz + c22 * sz) / det
    # sum of squared residuals = szz - 2 p.rhs + p^T M p, with p = (a, b, cl)
    quad = (a * (m00 * a + m01 * b + m02 * cl) + b * (m01 * a + m11 * b + m12 * cl)
            + cl * (m02 * a + m12 * b + m22 * cl))
    sse = szz - 2.0 * (a * sxz + b * syz + cl * sz) + quad
    if sse < 0.0:
        sse = 0.0
    sigma = math.sqrt(sse / n / (a * a + b * b + 1.0))
    c = cl + z0 - a * x - b * y
    return a, b, c, n, sigma, True


@njit(cache=True)
def footprint_prefix(heights, known):
    """Row-wise prefix sums used by ``footprint_fit_prefix``.

    Layer order: count, j, j^2, z, j*z, z^2 over known cells, each of shape
    (rows, cols + 1) with a leading zero column.
    """
    rows, cols = heights.shape
    out = np.zeros((6, rows, cols + 1))
    for i in range(rows):
        c0 = c1 = c2 = c3 = c4 = c5 = 0.0
        for j in range(cols):
            if known[i, j]:
                z = heights[i, j]
                c0 += 1.0
                c1 += j
                c2 += j * j
                c3 += z
                c4 += j * z
                c5 += z * z
            out[0, i, j + 1] = c0
            out[1, i, j + 1] = c1
            out[2, i, j + 1] = c2
            out[3, i, j + 1] = c3
            out[4, i, j + 1] = c4
            out[5, i, j + 1] = c5
    return out


@njit(cache=True)
def footprint_fit_prefix(pre, ox, oy, res, x, y, r):
    """Same fit as ``footprint_fit`` but each disk row is summed in O(1)
    from the row prefix sums, so the cost scales with the footprint
    diameter instead of its area."""
    rows = pre.shape[1]
    cols = pre.shape[2] - 1
    fx = (x - ox) / res
    fy = (y - oy) / res
    rr = r / res * (1.0 + DISK_SLACK)
    r2 = rr * rr
    n = 0.0
    su = sv = suu = suv = svv = sz = suz = svz = szz = 0.0
    i_lo = max(int(math.ceil(fx - rr)), 0)
    i_hi = min(int(math.floor(fx + rr)), rows - 1)
    for i in range(i_lo, i_hi + 1):
        du = i - fx
        rem = r2 - du * du
        if rem < 0.0:
            continue
        half = math.sqrt(rem)
        j_lo = max(int(math.ceil(fy - half)), 0)
        j_hi = min(int(math.floor(fy + half)), cols - 1)
        if j_hi < j_lo:
            continue
        a0 = j_lo
        a1 = j_hi + 1
        cnt = pre[0, i, a1] - pre[0, i, a0]
        if cnt == 0.0:
            continue
        sj = pre[1, i, a1] - pre[1, i, a0]
        sjj = pre[2, i, a1] - pre[2, i, a0]
        zr = pre[3, i, a1] - pre[3, i, a0]
        zj = pre[4, i, a1] - pre[4, i, a0]
        zz = pre[5, i, a1] - pre[5, i, a0]
        v1 = sj - fy * cnt
        v2 = sjj - 2.0 * fy * sj + fy * fy * cnt
        n += cnt
        su += du * cnt
        suu += du * du * cnt
        sv += v1
        svv += v2
        suv += du * v1
        sz += zr
        suz += du * zr
        svz += zj - fy * zr
        szz += zz
    ni = int(n + 0.5)
    if ni < 3:
        return 0.0, 0.0, 0.0, ni, 0.0, False
    # centre heights on their mean to keep the residual well conditioned
    zm = sz / n
    suz -= zm * su
    svz -= zm * sv
    szz = szz - 2.0 * zm * sz + n * zm * zm
    sz = 0.0
    m00, m01, m02 = suu * res * res, suv * res * res, su * res
    m11, m12, m22 = svv * res * res, sv * res, n
    bx, by = suz * res, svz * res
    c00 = m11 * m22 - m12 * m12
    c01 = m02 * m12 - m01 * m22
    c02 = m01 * m12 - m02 * m11
    det = m00 * c00 + m01 * c01 + m02 * c02
    scale = max(m00 * m11 * m22, 1e-300)
    if abs(det) <= DET_EPS * scale:
        return 0.0, 0.0, 0.0, ni, 0.0, False
    c11 = m00 * m22 - m02 * m02
    c12 = m01 * m02 - m00 * m12
    c22 = m00 * m11 - m01 * m01
    a = (c00 * bx + c01 * by) / det
    b = (c01 * bx + c11 * by) / det
    cl = (c02 * bx + c12 * by) / det
    quad = (a * (m00 * a + m01 * b + m02 * cl) + b * (m01 * a + m11 * b + m12 * cl)
            + cl * (m02 * a + m12 * b + m22 * cl))
    sse = szz - 2.0 * (a * bx + b * by) + quad
    if sse < 0.0:
        sse = 0.0
    sigma = math.sqrt(sse / n / (a * a + b * b + 1.0))
    c = cl + zm - a * x - b * y
    return a, b, c, ni, sigma, True


@njit(cache=True)
def footprint_slope_rough(pre, ox, oy, res, xs, ys, r):
    """Batched footprint fits: (slope angle, roughness, ok) per query point."""
    n = xs.shape[0]
    slope = np.zeros(n)
    rough = np.zeros(n)
    ok = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        a, b, _, _, sigma, good = footprint_fit_prefix(pre, ox, oy, res, xs[k], ys[k], r)
        if good:
            slope[k] = math.atan(math.sqrt(a * a + b * b))
            rough[k] = sigma
            ok[k] = True
    return slope, rough, ok


@njit(cache=True)
def footprint_planes(heights, known, ox, oy, res, xs, ys, r):
    """Batched footprint fits returning (a, b, c, ok)."""
    m = xs.shape[0]
    out = np.zeros((m, 3))
    ok = np.zeros(m, dtype=np.bool_)
    for k in range(m):
        a, b, c, _, _, good = footprint_fit(heights, known, ox, oy, res, xs[k], ys[k], r)
        out[k, 0] = a
        out[k, 1] = b
        out[k, 2] = c
        ok[k] = good
    return out, ok


@njit(cache=True)
def line_of_sight(blocked, x0, y0, x1, y1):
    """Closed-square supercover test in cell-index coordinates.

    A cell is touched when its closed square ``[i-.5, i+.5] x [j-.5, j+.5]``
    meets the segment, so passing exactly through a corner or along an
    edge touches the cells on both sides.
    """
    rows, cols = blocked.shape
    if x0 > x1:
        x0, x1 = x1, x0
        y0, y1 = y1, y0
    dx = x1 - x0
    dy = y1 - y0
    i_lo = max(int(math.ceil(x0 - 0.5)), 0)
    i_hi = min(int(math.floor(x1 + 0.5)), rows - 1)
    for i in range(i_lo, i_hi + 1):
        xa = max(x0, i - 0.5)
        xb = min(x1, i + 0.5)
        if dx == 0.0:
            ya = y0
            yb = y1
        else:
            ya = y0 + ((xa - x0) * dy) / dx
            yb = y0 + ((xb - x0) * dy) / dx
        if ya > yb:
            ya, yb = yb, ya
        j_lo = max(int(math.ceil(ya - 0.5)), 0)
        j_hi = min(int(math.floor(yb + 0.5)), cols - 1)
        for j in range(j_lo, j_hi + 1):
            if blocked[i, j]:
                return False
    return True


@njit(cache=True)
def raycast_heightfield(heights, known, ox, oy, res, origins, dirs, max_range, step, tol):
    """March rays against the bilinear height surface.

    Coarse march with ``step`` then bisection to ``tol`` on the first sign
    change of (ray z - terrain z).  Returns hit distances (nan on miss).
    """
    n = dirs.shape[0]
    out = np.full(n, np.nan)
    for k in range(n):
        px, py, pz = origins[k, 0], origins[k, 1], origins[k, 2]
        ux, uy, uz = dirs[k, 0], dirs[k, 1], dirs[k, 2]
        t_prev = 0.0
        g_prev = pz - bilinear_height(heights, known, ox, oy, res, px, py)
        if not (g_prev > 0.0):
            continue
        t = step
        while t <= max_range:
            zt = bilinear_height(heights, known, ox, oy, res, px + ux * t, py + uy * t)
            if np.isnan(zt):
                break
            g = pz + uz * t - zt
            if g <= 0.0:
                lo = t_prev
                hi = t
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    zm = bilinear_height(heights, known, ox, oy, res,
                                         px + ux * mid, py + uy * mid)
                    if np.isnan(zm) or pz + uz * mid - zm <= 0.0:
                        hi = mid
                    else:
                        lo = mid
                out[k] = hi
                break
            t_prev = t
            t += step
    return out
