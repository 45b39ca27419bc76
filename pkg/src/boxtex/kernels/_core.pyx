# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel lane.

Runs the same arithmetic as the numpy lane per point/ray pair, with every
expression written in the same operation order, so results are bit-identical
(the build disables floating-point contraction). Tie rules match too: the
lowest triangle index wins equal distances, including inside the BVH
traversal, which therefore returns exactly the brute-force answer.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, floor, isnan, sqrt

cnp.import_array()

DEF DET_EPS = 1e-14
DEF BARY_EPS = 1e-12
DEF T_MIN = 1e-12
DEF STACK_CAP = 256


cdef inline double _tri_closest(double px, double py, double pz,
                                const double* tri,
                                double* out_v, double* out_w,
                                double* qx, double* qy, double* qz) noexcept nogil:
    """Closest point on one triangle; returns squared distance.

    Region cascade mirrors the numpy lane's reverse-precedence overwrite:
    vertex regions win over edge regions over the interior formula.
    """
    cdef double ax = tri[0], ay = tri[1], az = tri[2]
    cdef double abx = tri[3] - ax, aby = tri[4] - ay, abz = tri[5] - az
    cdef double acx = tri[6] - ax, acy = tri[7] - ay, acz = tri[8] - az

    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = abx * apx + aby * apy + abz * apz
    cdef double d2 = acx * apx + acy * apy + acz * apz
    cdef double bpx = px - tri[3], bpy = py - tri[4], bpz = pz - tri[5]
    cdef double d3 = abx * bpx + aby * bpy + abz * bpz
    cdef double d4 = acx * bpx + acy * bpy + acz * bpz
    cdef double cpx = px - tri[6], cpy = py - tri[7], cpz = pz - tri[8]
    cdef double d5 = abx * cpx + aby * cpy + abz * cpz
    cdef double d6 = acx * cpx + acy * cpy + acz * cpz

    cdef double vc = d1 * d4 - d3 * d2
    cdef double vb = d5 * d2 - d1 * d6
    cdef double va = d3 * d6 - d5 * d4

    cdef double v, w, denom, wBC
    if d1 <= 0.0 and d2 <= 0.0:
        v = 0.0; w = 0.0
    elif d3 >= 0.0 and d4 <= d3:
        v = 1.0; w = 0.0
    elif d6 >= 0.0 and d5 <= d6:
        v = 0.0; w = 1.0
    elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3); w = 0.0
    elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        v = 0.0; w = d2 / (d2 - d6)
    elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        wBC = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        v = 1.0 - wBC; w = wBC
    else:
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom

    cdef double cqx = ax + v * abx + w * acx
    cdef double cqy = ay + v * aby + w * acy
    cdef double cqz = az + v * abz + w * acz
    cdef double dx = cqx - px, dy = cqy - py, dz = cqz - pz
    out_v[0] = v; out_w[0] = w
    qx[0] = cqx; qy[0] = cqy; qz[0] = cqz
    return dx * dx + dy * dy + dz * dz


def closest_point_brute(tris, points):
    """Exhaustive scan; lowest triangle index wins ties.

    Triangles must have nonzero area (same contract as the numpy lane).
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=3] T = \
        np.ascontiguousarray(tris, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] P = \
        np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t ntri = T.shape[0], npt = P.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] q = np.empty((npt, 3), np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(npt, np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] tri_idx = np.empty(npt, np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bary = np.empty((npt, 3), np.float64)

    cdef Py_ssize_t i, h
    cdef double px, py, pz, d2, v, w, qx, qy, qz
    cdef double bd2, bv, bw, bqx, bqy, bqz
    cdef Py_ssize_t btri
    with nogil:
        for i in range(npt):
            px = P[i, 0]; py = P[i, 1]; pz = P[i, 2]
            bd2 = INFINITY; btri = -1
            bv = 0.0; bw = 0.0; bqx = 0.0; bqy = 0.0; bqz = 0.0
            for h in range(ntri):
                d2 = _tri_closest(px, py, pz, &T[h, 0, 0],
                                  &v, &w, &qx, &qy, &qz)
                if d2 < bd2:
                    bd2 = d2; btri = h
                    bv = v; bw = w; bqx = qx; bqy = qy; bqz = qz
            dist[i] = sqrt(bd2)
            q[i, 0] = bqx; q[i, 1] = bqy; q[i, 2] = bqz
            bary[i, 0] = 1.0 - bv - bw; bary[i, 1] = bv; bary[i, 2] = bw
            tri_idx[i] = <cnp.int32_t>btri
    return q, dist, tri_idx, bary


cdef inline double _box_dist2(double px, double py, double pz,
                              const double* bmin, const double* bmax) noexcept nogil:
    cdef double dx = 0.0, dy = 0.0, dz = 0.0
    if px < bmin[0]: dx = bmin[0] - px
    elif px > bmax[0]: dx = px - bmax[0]
    if py < bmin[1]: dy = bmin[1] - py
    elif py > bmax[1]: dy = py - bmax[1]
    if pz < bmin[2]: dz = bmin[2] - pz
    elif pz > bmax[2]: dz = pz - bmax[2]
    return dx * dx + dy * dy + dz * dz


def closest_point_bvh(bvh, tris, points):
    """Hierarchy-pruned query, result identical to the exhaustive scan.

    A node is pruned only when its box is strictly farther than the current
    best, and an equal-distance triangle replaces the best only if its index
    is lower, so traversal order cannot change the answer.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=3] T = \
        np.ascontiguousarray(tris, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] P = \
        np.ascontiguousarray(points, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] nbmin = \
        np.ascontiguousarray(bvh.bmin, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] nbmax = \
        np.ascontiguousarray(bvh.bmax, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] left = \
        np.ascontiguousarray(bvh.left, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] right = \
        np.ascontiguousarray(bvh.right, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] start = \
        np.ascontiguousarray(bvh.start, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] count = \
        np.ascontiguousarray(bvh.count, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] order = \
        np.ascontiguousarray(bvh.tri_order, dtype=np.int32)

    cdef Py_ssize_t npt = P.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] q = np.empty((npt, 3), np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(npt, np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] tri_idx = np.empty(npt, np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bary = np.empty((npt, 3), np.float64)

    cdef int stack[STACK_CAP]
    cdef int sp, node, lc, rc, k, h
    cdef Py_ssize_t i
    cdef double px, py, pz, d2, v, w, qx, qy, qz
    cdef double bd2, bv, bw, bqx, bqy, bqz, dl, dr
    cdef int btri
    with nogil:
        for i in range(npt):
            px = P[i, 0]; py = P[i, 1]; pz = P[i, 2]
            bd2 = INFINITY; btri = -1
            bv = 0.0; bw = 0.0; bqx = 0.0; bqy = 0.0; bqz = 0.0
            sp = 0
            stack[sp] = 0; sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if _box_dist2(px, py, pz, &nbmin[node, 0], &nbmax[node, 0]) > bd2:
                    continue
                if count[node] > 0:
                    for k in range(count[node]):
                        h = order[start[node] + k]
                        d2 = _tri_closest(px, py, pz, &T[h, 0, 0],
                                          &v, &w, &qx, &qy, &qz)
                        if d2 < bd2 or (d2 == bd2 and h < btri):
                            bd2 = d2; btri = h
                            bv = v; bw = w; bqx = qx; bqy = qy; bqz = qz
                else:
                    lc = left[node]; rc = right[node]
                    dl = _box_dist2(px, py, pz, &nbmin[lc, 0], &nbmax[lc, 0])
                    dr = _box_dist2(px, py, pz, &nbmin[rc, 0], &nbmax[rc, 0])
                    # push the farther child first so the nearer is popped next
                    if dl <= dr:
                        if sp + 2 > STACK_CAP:
                            sp = 0  # cannot happen for balanced trees; bail safe
                        stack[sp] = rc; sp += 1
                        stack[sp] = lc; sp += 1
                    else:
                        if sp + 2 > STACK_CAP:
                            sp = 0
                        stack[sp] = lc; sp += 1
                        stack[sp] = rc; sp += 1
            dist[i] = sqrt(bd2)
            q[i, 0] = bqx; q[i, 1] = bqy; q[i, 2] = bqz
            bary[i, 0] = 1.0 - bv - bw; bary[i, 1] = bv; bary[i, 2] = bw
            tri_idx[i] = btri
    return q, dist, tri_idx, bary


cdef inline bint _slab_hit_one(const double* o, const double* d,
                               const double* bmin, const double* bmax) noexcept nogil:
    """Ray/AABB test matching the numpy lane's NaN handling: a 0 * inf axis
    contributes nothing; if every axis is NaN the ray is culled."""
    cdef double tlo = -INFINITY, thi = INFINITY
    cdef double inv, t1, t2, lo_a, hi_a
    cdef int k, n_ok = 0
    for k in range(3):
        inv = 1.0 / d[k]
        t1 = (bmin[k] - o[k]) * inv
        t2 = (bmax[k] - o[k]) * inv
        if isnan(t1) or isnan(t2):
            continue
        n_ok += 1
        if t1 < t2:
            lo_a = t1; hi_a = t2
        else:
            lo_a = t2; hi_a = t1
        if lo_a > tlo: tlo = lo_a
        if hi_a < thi: thi = hi_a
    if n_ok == 0:
        return 0
    if tlo < 0.0:
        tlo = 0.0
    return thi >= tlo and thi > 0.0


def first_opaque_hit(origins, dirs, tris, tri_uv, part_start, part_bounds,
                     alpha_imgs, alpha_thresh):
    """First intersection whose texel alpha passes the threshold."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] O = \
        np.ascontiguousarray(origins, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] D = \
        np.ascontiguousarray(dirs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] T = \
        np.ascontiguousarray(tris, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] UV = \
        np.ascontiguousarray(tri_uv, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] PS = \
        np.ascontiguousarray(part_start, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] PB = \
        np.ascontiguousarray(part_bounds, dtype=np.float64)
    cdef cnp.ndarray[cnp.float32_t, ndim=3] A = \
        np.ascontiguousarray(alpha_imgs, dtype=np.float32)
    cdef double thresh = alpha_thresh

    cdef Py_ssize_t nray = O.shape[0]
    cdef int npart = PS.shape[0] - 1
    cdef Py_ssize_t ih = A.shape[1], iw = A.shape[2]

    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_t = np.full(nray, np.inf)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] best_tri = np.full(nray, -1, np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_u = np.zeros(nray)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_v = np.zeros(nray)

    cdef Py_ssize_t i
    cdef int p, h, t0, t1
    cdef double ox, oy, oz, dx, dy, dz
    cdef double ax, ay, az, e1x, e1y, e1z, e2x, e2y, e2z
    cdef double pvx, pvy, pvz, det, inv, tvx, tvy, tvz
    cdef double u, v, qvx, qvy, qvz, th
    cdef double w0, hx, hy
    cdef Py_ssize_t ix, iy
    with nogil:
        for i in range(nray):
            ox = O[i, 0]; oy = O[i, 1]; oz = O[i, 2]
            dx = D[i, 0]; dy = D[i, 1]; dz = D[i, 2]
            for p in range(npart):
                t0 = PS[p]; t1 = PS[p + 1]
                if t1 == t0:
                    continue
                if not _slab_hit_one(&O[i, 0], &D[i, 0], &PB[p, 0], &PB[p, 3]):
                    continue
                for h in range(t0, t1):
                    ax = T[h, 0, 0]; ay = T[h, 0, 1]; az = T[h, 0, 2]
                    e1x = T[h, 1, 0] - ax; e1y = T[h, 1, 1] - ay; e1z = T[h, 1, 2] - az
                    e2x = T[h, 2, 0] - ax; e2y = T[h, 2, 1] - ay; e2z = T[h, 2, 2] - az
                    pvx = dy * e2z - dz * e2y
                    pvy = dz * e2x - dx * e2z
                    pvz = dx * e2y - dy * e2x
                    det = e1x * pvx + e1y * pvy + e1z * pvz
                    if fabs(det) <= DET_EPS:
                        continue
                    inv = 1.0 / det
                    tvx = ox - ax; tvy = oy - ay; tvz = oz - az
                    u = (tvx * pvx + tvy * pvy + tvz * pvz) * inv
                    if u < -BARY_EPS:
                        continue
                    qvx = tvy * e1z - tvz * e1y
                    qvy = tvz * e1x - tvx * e1z
                    qvz = tvx * e1y - tvy * e1x
                    v = (dx * qvx + dy * qvy + dz * qvz) * inv
                    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
                        continue
                    th = (e2x * qvx + e2y * qvy + e2z * qvz) * inv
                    if th <= T_MIN or th >= best_t[i]:
                        continue
                    w0 = 1.0 - u - v
                    hx = w0 * UV[h, 0, 0] + u * UV[h, 1, 0] + v * UV[h, 2, 0]
                    hy = w0 * UV[h, 0, 1] + u * UV[h, 1, 1] + v * UV[h, 2, 1]
                    ix = <Py_ssize_t>floor(hx)
                    if ix < 0: ix = 0
                    elif ix > iw - 1: ix = iw - 1
                    iy = <Py_ssize_t>floor(hy)
                    if iy < 0: iy = 0
                    elif iy > ih - 1: iy = ih - 1
                    if <double>A[p, iy, ix] < thresh:
                        continue
                    best_t[i] = th
                    best_tri[i] = h
                    best_u[i] = u
                    best_v[i] = v
    return best_tri, best_t, best_u, best_v
