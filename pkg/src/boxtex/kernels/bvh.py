"""Axis-aligned BVH over triangles, stored as flat arrays.

Built once in Python; traversed by whichever kernel backend is active.
Median split on the longest centroid axis, deterministic for a fixed
triangle order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 8


@dataclass(frozen=True)
class BvhArrays:
    """Flat BVH. Internal nodes have left/right >= 0; leaves have count > 0.

    tri_order is a permutation of range(T); a leaf owns
    tri_order[start:start+count]. Every triangle sits in exactly one leaf.
    """

    bmin: np.ndarray      # (M, 3) float64
    bmax: np.ndarray      # (M, 3) float64
    left: np.ndarray      # (M,) int32, -1 for leaves
    right: np.ndarray     # (M,) int32
    start: np.ndarray     # (M,) int32
    count: np.ndarray     # (M,) int32, 0 for internal nodes
    tri_order: np.ndarray # (T,) int32


def build_bvh(tris: np.ndarray) -> BvhArrays:
    """tris: (T, 3, 3) float64 vertex triples."""
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    ntri = tris.shape[0]
    if ntri == 0:
        raise ValueError("cannot index an empty triangle set")
    tmin = tris.min(axis=1)
    tmax = tris.max(axis=1)
    cent = (tmin + tmax) * 0.5

    bmin, bmax, left, right, start, count = [], [], [], [], [], []
    order = np.arange(ntri, dtype=np.int32)

    def new_node() -> int:
        bmin.append(None); bmax.append(None)
        left.append(-1); right.append(-1)
        start.append(0); count.append(0)
        return len(bmin) - 1

    # (node_id, lo, hi) ranges into `order`; iterative for deep meshes
    root = new_node()
    stack = [(root, 0, ntri)]
    while stack:
        node, lo, hi = stack.pop()
        idx = order[lo:hi]
        bmin[node] = tmin[idx].min(axis=0)
        bmax[node] = tmax[idx].max(axis=0)
        n = hi - lo
        if n <= LEAF_SIZE:
            start[node] = lo
            count[node] = n
            continue
        axis = int(np.argmax(bmax[node] - bmin[node]))
        key = cent[idx, axis]
        # stable sort keeps splits deterministic under coordinate ties
        order[lo:hi] = idx[np.argsort(key, kind="stable")]
        mid = lo + n // 2
        lc, rc = new_node(), new_node()
        left[node], right[node] = lc, rc
        stack.append((rc, mid, hi))
        stack.append((lc, lo, mid))

    return BvhArrays(
        bmin=np.asarray(bmin, dtype=np.float64),
        bmax=np.asarray(bmax, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        start=np.asarray(start, dtype=np.int32),
        count=np.asarray(count, dtype=np.int32),
        tri_order=order,
    )
