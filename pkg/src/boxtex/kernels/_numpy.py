"""Vectorized numpy kernel lane.

Arithmetic is written componentwise in a fixed order so the compiled lane
(`_core.pyx`), which runs the same formulas per pair, produces bit-identical
values; ties then resolve the same way in both lanes (first triangle, first
part).
"""

from __future__ import annotations

import numpy as np

from .bvh import BvhArrays

PAIR_BUDGET = 400_000   # max broadcast pairs per chunk, bounds peak memory
DET_EPS = 1e-14
BARY_EPS = 1e-12
T_MIN = 1e-12


def _closest_on_tris(px, py, pz, tri):
    """Closest point on each triangle for each query point.

    px/py/pz: (c, 1) point components; tri: (T, 3, 3).
    Returns squared distance, v, w, qx, qy, qz as (c, T) arrays where the
    closest point is A + v*AB + w*AC.
    """
    ax, ay, az = tri[:, 0, 0], tri[:, 0, 1], tri[:, 0, 2]
    abx, aby, abz = tri[:, 1, 0] - ax, tri[:, 1, 1] - ay, tri[:, 1, 2] - az
    acx, acy, acz = tri[:, 2, 0] - ax, tri[:, 2, 1] - ay, tri[:, 2, 2] - az

    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    bpx, bpy, bpz = px - tri[:, 1, 0], py - tri[:, 1, 1], pz - tri[:, 1, 2]
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    cpx, cpy, cpz = px - tri[:, 2, 0], py - tri[:, 2, 1], pz - tri[:, 2, 2]
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        # overwrite in reverse precedence so the first matching region wins,
        # mirroring the scalar early-return cascade
        m = (va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0)
        wBC = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        v = np.where(m, 1.0 - wBC, v)
        w = np.where(m, wBC, w)
        m = (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0)
        v = np.where(m, 0.0, v)
        w = np.where(m, d2 / (d2 - d6), w)
        m = (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0)
        v = np.where(m, d1 / (d1 - d3), v)
        w = np.where(m, 0.0, w)
    m = (d6 >= 0.0) & (d5 <= d6)
    v = np.where(m, 0.0, v)
    w = np.where(m, 1.0, w)
    m = (d3 >= 0.0) & (d4 <= d3)
    v = np.where(m, 1.0, v)
    w = np.where(m, 0.0, w)
    m = (d1 <= 0.0) & (d2 <= 0.0)
    v = np.where(m, 0.0, v)
    w = np.where(m, 0.0, w)

    qx = ax + v * abx + w * acx
    qy = ay + v * aby + w * acy
    qz = az + v * abz + w * acz
    dx, dy, dz = qx - px, qy - py, qz - pz
    return dx * dx + dy * dy + dz * dz, v, w, qx, qy, qz


def closest_point_brute(tris: np.ndarray, points: np.ndarray):
    """Exhaustive nearest-surface-point query.

    tris: (T, 3, 3) float64; points: (N, 3) float64.
    Returns (q (N,3), dist (N,), tri (N,) int32, bary (N,3)).
    Ties go to the lowest triangle index. Triangles must have nonzero area:
    the edge-region formulas divide by edge dot products.
    """
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.float64)
    ntri, npt = tris.shape[0], points.shape[0]
    q = np.empty((npt, 3), dtype=np.float64)
    dist = np.empty(npt, dtype=np.float64)
    tri_idx = np.empty(npt, dtype=np.int32)
    bary = np.empty((npt, 3), dtype=np.float64)

    chunk = max(1, PAIR_BUDGET // max(ntri, 1))
    for lo in range(0, npt, chunk):
        hi = min(npt, lo + chunk)
        px = points[lo:hi, 0:1]
        py = points[lo:hi, 1:2]
        pz = points[lo:hi, 2:3]
        d2, v, w, qx, qy, qz = _closest_on_tris(px, py, pz, tris)
        best = np.argmin(d2, axis=1)
        rows = np.arange(hi - lo)
        dist[lo:hi] = np.sqrt(d2[rows, best])
        q[lo:hi, 0] = qx[rows, best]
        q[lo:hi, 1] = qy[rows, best]
        q[lo:hi, 2] = qz[rows, best]
        vv, ww = v[rows, best], w[rows, best]
        bary[lo:hi, 0] = 1.0 - vv - ww
        bary[lo:hi, 1] = vv
        bary[lo:hi, 2] = ww
        tri_idx[lo:hi] = best.astype(np.int32)
    return q, dist, tri_idx, bary


def closest_point_bvh(bvh: BvhArrays, tris: np.ndarray, points: np.ndarray):
    """Fallback lane ignores the hierarchy: the exhaustive scan returns the
    same minimum by definition, and vectorizes better than per-node hops."""
    return closest_point_brute(tris, points)


def _slab_hit(origins, dirs, bmin, bmax):
    """Ray/AABB test. origins, dirs: (R, 3). Returns (R,) bool."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (bmin[None, :] - origins) * inv
        t2 = (bmax[None, :] - origins) * inv
    tlo = np.nanmax(np.minimum(t1, t2), axis=1)
    thi = np.nanmin(np.maximum(t1, t2), axis=1)
    return (thi >= np.maximum(tlo, 0.0)) & (thi > 0.0)


def first_opaque_hit(origins, dirs, tris, tri_uv, part_start, part_bounds,
                     alpha_imgs, alpha_thresh):
    """First intersection whose texel alpha passes the threshold.

    Intersections with alpha below the threshold are skipped entirely, so a
    ray continues through transparent texels with no re-marching.

    origins, dirs: (R, 3) float64. tris: (T, 3, 3) float64 grouped by part.
    tri_uv: (T, 3, 2) float64 texel coordinates. part_start: (P+1,) int32
    offsets into tris. part_bounds: (P, 6) [minxyz, maxxyz].
    alpha_imgs: (P, H, W) float32. Returns (tri (R,) int32, t, bu, bv) with
    tri == -1 and t == +inf on miss.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    nray = origins.shape[0]
    npart = len(part_start) - 1
    ih, iw = alpha_imgs.shape[1], alpha_imgs.shape[2]

    best_t = np.full(nray, np.inf, dtype=np.float64)
    best_tri = np.full(nray, -1, dtype=np.int32)
    best_u = np.zeros(nray, dtype=np.float64)
    best_v = np.zeros(nray, dtype=np.float64)

    for p in range(npart):
        t0, t1 = int(part_start[p]), int(part_start[p + 1])
        if t1 == t0:
            continue
        sel = np.nonzero(_slab_hit(origins, dirs, part_bounds[p, :3],
                                   part_bounds[p, 3:]))[0]
        if sel.size == 0:
            continue
        tri = tris[t0:t1]
        uv = tri_uv[t0:t1]
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        chunk = max(1, PAIR_BUDGET // (t1 - t0))
        for lo in range(0, sel.size, chunk):
            rows = sel[lo:lo + chunk]
            o = origins[rows]
            d = dirs[rows]
            # Moller-Trumbore, componentwise
            pvx = d[:, 1:2] * e2[:, 2] - d[:, 2:3] * e2[:, 1]
            pvy = d[:, 2:3] * e2[:, 0] - d[:, 0:1] * e2[:, 2]
            pvz = d[:, 0:1] * e2[:, 1] - d[:, 1:2] * e2[:, 0]
            det = e1[:, 0] * pvx + e1[:, 1] * pvy + e1[:, 2] * pvz
            tvx = o[:, 0:1] - tri[:, 0, 0]
            tvy = o[:, 1:2] - tri[:, 0, 1]
            tvz = o[:, 2:3] - tri[:, 0, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / det
                u = (tvx * pvx + tvy * pvy + tvz * pvz) * inv
                qvx = tvy * e1[:, 2] - tvz * e1[:, 1]
                qvy = tvz * e1[:, 0] - tvx * e1[:, 2]
                qvz = tvx * e1[:, 1] - tvy * e1[:, 0]
                v = (d[:, 0:1] * qvx + d[:, 1:2] * qvy + d[:, 2:3] * qvz) * inv
                th = (e2[:, 0] * qvx + e2[:, 1] * qvy + e2[:, 2] * qvz) * inv
            ok = (np.abs(det) > DET_EPS) & (u >= -BARY_EPS) & (v >= -BARY_EPS) \
                & (u + v <= 1.0 + BARY_EPS) & (th > T_MIN)
            oi, oj = np.nonzero(ok)
            if oi.size == 0:
                continue
            # texel alpha at the actual hits only; transparent hits are culled
            uh, vh = u[oi, oj], v[oi, oj]
            w0 = 1.0 - uh - vh
            hx = w0 * uv[oj, 0, 0] + uh * uv[oj, 1, 0] + vh * uv[oj, 2, 0]
            hy = w0 * uv[oj, 0, 1] + uh * uv[oj, 1, 1] + vh * uv[oj, 2, 1]
            ix = np.clip(np.floor(hx).astype(np.int64), 0, iw - 1)
            iy = np.clip(np.floor(hy).astype(np.int64), 0, ih - 1)
            opaque = alpha_imgs[p, iy, ix] >= alpha_thresh
            th_ok = np.full_like(th, np.inf)
            th_ok[oi[opaque], oj[opaque]] = th[oi[opaque], oj[opaque]]
            th = th_ok
            arg = np.argmin(th, axis=1)
            rr = np.arange(rows.size)
            tbest = th[rr, arg]
            upd = tbest < best_t[rows]
            tgt = rows[upd]
            best_t[tgt] = tbest[upd]
            best_tri[tgt] = (t0 + arg[upd]).astype(np.int32)
            best_u[tgt] = u[rr, arg][upd]
            best_v[tgt] = v[rr, arg][upd]
    return best_tri, best_t, best_u, best_v
