"""Texture baking: project every used atlas texel onto the part surface.

A texel whose surface point on the deformed box lies further from the part
than tau * bbox_diagonal is a miss and stays fully transparent; that is what
lets a closed box render a part with holes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .atlas import AtlasImage, AtlasLayout, surface_points
from .geom import DeformedBox, PartMesh, sample_part_color

DEFAULT_TAU = 0.03


@dataclass
class SurfaceIndex:
    """BVH over a part's triangles plus what color lookups need."""

    part: PartMesh
    tris: np.ndarray          # (T,3,3) float64
    bvh: kernels.BvhArrays
    bbox_diag: float


def build_index(part: PartMesh) -> SurfaceIndex:
    tris = part.triangle_array()
    lo, hi = part.bbox()
    return SurfaceIndex(
        part=part,
        tris=tris,
        bvh=kernels.build_bvh(tris),
        bbox_diag=float(np.linalg.norm(hi - lo)),
    )


def closest_point(index: SurfaceIndex, p) -> tuple[np.ndarray, float, int, np.ndarray]:
    """(surface point, distance, triangle index, barycentric) for one query."""
    q, d, t, b = kernels.closest_point_bvh(index.bvh, index.tris,
                                           np.asarray(p, dtype=np.float64)[None, :])
    return q[0], float(d[0]), int(t[0]), b[0]


def closest_point_batch(index: SurfaceIndex, points: np.ndarray):
    return kernels.closest_point_bvh(index.bvh, index.tris,
                                     np.asarray(points, dtype=np.float64))


def bake_part(part: PartMesh, box: DeformedBox, layout: AtlasLayout,
              tau: float = DEFAULT_TAU,
              index: SurfaceIndex | None = None) -> AtlasImage:
    """Bakes the part's source colors into the box's atlas.

    Alpha is binary: 1 where the closest-point projection hits the part
    within tolerance, 0 for misses and for the unused gap texels.
    """
    if index is None:
        index = build_index(part)
    pts, yx = surface_points(layout, box)
    q, dist, tri, bary = closest_point_batch(index, pts)
    hit = dist <= tau * index.bbox_diag

    img = np.zeros((layout.height, layout.width, 4), dtype=np.float32)
    hy, hx = yx[hit, 0], yx[hit, 1]
    colors = sample_part_color(part, tri[hit], bary[hit])
    img[hy, hx, :3] = np.clip(colors, 0.0, 1.0)
    img[hy, hx, 3] = 1.0
    return AtlasImage(pixels=img, l=layout.l)
