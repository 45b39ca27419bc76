"""Unfolded box atlas: a 4l x 3l cross of six l x l face rects.

Middle row (y in [l,2l)): front,right,back,left at x = 0,l,2l,3l.
Top face above the front rect, bottom face below it. That keeps five cube
edges connected in UV and cuts the other seven; the cut edges are tracked as
seam pairs. Everything outside the six rects is unused (alpha 0).

Face parameterizations are affine in the template-cube coordinates and agree
along the five kept edges, so the unfolding is continuous there by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .geom import BoxMesh, DeformedBox

# atlas rect order; values are geometry face ids (+x,-x,+y,-y,+z,-z)
FACE_ORDER = ("front", "right", "back", "left", "top", "bottom")
FACE_TO_GEOM = {"front": 0, "right": 2, "back": 1, "left": 3,
                "top": 4, "bottom": 5}
GEOM_TO_FACE = {g: f for f, g in FACE_TO_GEOM.items()}

# (u, v) in [0,1]^2 -> point on the unit template cube
_FACE_POINT = {
    "front":  lambda u, v: (0.5, -0.5 + u, 0.5 - v),
    "right":  lambda u, v: (0.5 - u, 0.5, 0.5 - v),
    "back":   lambda u, v: (-0.5, 0.5 - u, 0.5 - v),
    "left":   lambda u, v: (-0.5 + u, -0.5, 0.5 - v),
    "top":    lambda u, v: (-0.5 + v, -0.5 + u, 0.5),
    "bottom": lambda u, v: (0.5 - v, -0.5 + u, -0.5),
}

# inverse: point on a face -> (u, v)
_FACE_UV = {
    "front":  lambda p: (p[1] + 0.5, 0.5 - p[2]),
    "right":  lambda p: (0.5 - p[0], 0.5 - p[2]),
    "back":   lambda p: (0.5 - p[1], 0.5 - p[2]),
    "left":   lambda p: (p[0] + 0.5, 0.5 - p[2]),
    "top":    lambda p: (p[1] + 0.5, p[0] + 0.5),
    "bottom": lambda p: (p[1] + 0.5, 0.5 - p[0]),
}

# the seven cut cube edges as (face_a, face_b)
_CUT_EDGES = (
    ("front", "left"),
    ("top", "right"),
    ("top", "back"),
    ("top", "left"),
    ("bottom", "right"),
    ("bottom", "back"),
    ("bottom", "left"),
)

_FACE_PLANE = {"front": (0, 0.5), "back": (0, -0.5), "right": (1, 0.5),
               "left": (1, -0.5), "top": (2, 0.5), "bottom": (2, -0.5)}


@dataclass
class SeamPair:
    """One cut cube edge, seen from both faces.

    uv_a/uv_b: (l, 2) float64 coordinates exactly on the cut segment, at the
    same edge parameter on both sides, so they map to identical 3D points.
    pix_a/pix_b: (l, 2) int32 (x, y) boundary texels used for image-space
    comparisons, a half texel inside each rect.
    """

    face_a: str
    face_b: str
    uv_a: np.ndarray
    uv_b: np.ndarray
    pix_a: np.ndarray
    pix_b: np.ndarray


@dataclass
class AtlasLayout:
    l: int
    grid_n: int
    rects: dict[str, tuple[int, int]]
    tri_uv: np.ndarray    # (F, 3, 2) float64 texel coords per template corner
    tri_face: np.ndarray  # (F,) int32 geometry face ids
    seams: list[SeamPair]
    _tri_map: np.ndarray | None = field(default=None, repr=False)
    _bary_map: np.ndarray | None = field(default=None, repr=False)

    @property
    def width(self) -> int:
        return 4 * self.l

    @property
    def height(self) -> int:
        return 3 * self.l

    def texel_map(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-texel (triangle index, barycentric) with -1 marking unused.

        Each used texel is claimed by exactly one triangle: cell-interior
        texels by containment, texels on the shared cell diagonal by the
        upper-right triangle (a top-left style tie rule; rect boundaries at
        integer coordinates never pass through half-integer texel centers).
        """
        if self._tri_map is None:
            self._tri_map, self._bary_map = _rasterize(self)
        return self._tri_map, self._bary_map

    def used_mask(self) -> np.ndarray:
        tri_map, _ = self.texel_map()
        return tri_map >= 0


def build_layout(l: int, grid_n: int) -> AtlasLayout:
    if l < 8:
        raise ValueError("l must be >= 8")
    if l % grid_n != 0:
        raise ValueError("l must be divisible by grid_n")
    rects = {
        "front": (0, l), "right": (l, l), "back": (2 * l, l), "left": (3 * l, l),
        "top": (0, 0), "bottom": (0, 2 * l),
    }

    n = grid_n
    s = l // n
    nface_tris = 2 * n * n
    tri_uv = np.empty((6 * nface_tris, 3, 2), dtype=np.float64)
    tri_face = np.empty(6 * nface_tris, dtype=np.int32)
    for geom_id in range(6):
        fname = GEOM_TO_FACE[geom_id]
        x0, y0 = rects[fname]
        t = geom_id * nface_tris
        for i in range(n):
            for j in range(n):
                a = (x0 + j * s, y0 + i * s)
                b = (x0 + (j + 1) * s, y0 + i * s)
                c = (x0 + (j + 1) * s, y0 + (i + 1) * s)
                d = (x0 + j * s, y0 + (i + 1) * s)
                tri_uv[t] = (a, d, c)       # template emits (a,d,c),(a,c,b)
                tri_uv[t + 1] = (a, c, b)
                tri_face[t:t + 2] = geom_id
                t += 2

    seams = [_build_seam(fa, fb, rects, l) for fa, fb in _CUT_EDGES]
    return AtlasLayout(l=l, grid_n=grid_n, rects=rects, tri_uv=tri_uv,
                       tri_face=tri_face, seams=seams)


def _build_seam(face_a: str, face_b: str, rects, l: int) -> SeamPair:
    axis_a, val_a = _FACE_PLANE[face_a]
    axis_b, val_b = _FACE_PLANE[face_b]
    free = 3 - axis_a - axis_b
    e0 = np.zeros(3)
    e1 = np.zeros(3)
    e0[axis_a] = e1[axis_a] = val_a
    e0[axis_b] = e1[axis_b] = val_b
    e0[free], e1[free] = -0.5, 0.5

    t = (np.arange(l, dtype=np.float64) + 0.5) / l
    pts = e0[None, :] + t[:, None] * (e1 - e0)[None, :]

    def side(face: str) -> tuple[np.ndarray, np.ndarray]:
        x0, y0 = rects[face]
        uvn = np.array([_FACE_UV[face](p) for p in pts])
        uv = np.column_stack([x0 + uvn[:, 0] * l, y0 + uvn[:, 1] * l])
        pix = np.floor(uv).astype(np.int64)
        pix[:, 0] = np.clip(pix[:, 0], x0, x0 + l - 1)
        pix[:, 1] = np.clip(pix[:, 1], y0, y0 + l - 1)
        return uv, pix.astype(np.int32)

    uv_a, pix_a = side(face_a)
    uv_b, pix_b = side(face_b)
    return SeamPair(face_a=face_a, face_b=face_b, uv_a=uv_a, uv_b=uv_b,
                    pix_a=pix_a, pix_b=pix_b)


def _rasterize(layout: AtlasLayout) -> tuple[np.ndarray, np.ndarray]:
    l, n = layout.l, layout.grid_n
    s = l // n
    h, w = layout.height, layout.width
    tri_map = np.full((h, w), -1, dtype=np.int32)
    bary_map = np.zeros((h, w, 3), dtype=np.float64)

    lx = np.arange(l)
    cx, dx = lx // s, lx % s
    cy, dy = cx, dx  # square rects: same decomposition per axis
    fx = (dx + 0.5) / s
    fy = fx

    cxg, cyg = np.meshgrid(cx, cy)          # [row, col]
    dxg, dyg = np.meshgrid(dx, dy)
    fxg, fyg = np.meshgrid(fx, fy)
    lower = dyg > dxg                        # diagonal ties go to the upper tri
    nface_tris = 2 * n * n
    cell = cyg * n + cxg

    b0 = np.where(lower, 1.0 - fyg, 1.0 - fxg)
    b1 = np.where(lower, fyg - fxg, fyg)
    b2 = np.where(lower, fxg, fxg - fyg)

    for geom_id in range(6):
        x0, y0 = layout.rects[GEOM_TO_FACE[geom_id]]
        tri_map[y0:y0 + l, x0:x0 + l] = (geom_id * nface_tris + 2 * cell
                                         + np.where(lower, 0, 1))
        bary_map[y0:y0 + l, x0:x0 + l, 0] = b0
        bary_map[y0:y0 + l, x0:x0 + l, 1] = b1
        bary_map[y0:y0 + l, x0:x0 + l, 2] = b2
    return tri_map, bary_map


def uv_to_surface(layout: AtlasLayout, box: BoxMesh | DeformedBox,
                  uv: tuple[float, float]) -> np.ndarray | None:
    """Continuous UV (texel coordinates) to a point on the box surface.

    Rect boundaries are inclusive; where two rects meet along a kept edge
    both give the same point, so first match in face order is fine. Returns
    None in the unused gap regions.
    """
    u, v = float(uv[0]), float(uv[1])
    l, n = layout.l, layout.grid_n
    s = l // n
    for fname in FACE_ORDER:
        x0, y0 = layout.rects[fname]
        if not (x0 <= u <= x0 + l and y0 <= v <= y0 + l):
            continue
        lx, ly = (u - x0) / s, (v - y0) / s
        cx = min(int(np.floor(lx)), n - 1)
        cy = min(int(np.floor(ly)), n - 1)
        fxv, fyv = lx - cx, ly - cy
        geom_id = FACE_TO_GEOM[fname]
        tri = 2 * (geom_id * n * n + cy * n + cx) + (0 if fyv > fxv else 1)
        if fyv > fxv:
            bary = np.array([1.0 - fyv, fyv - fxv, fxv])
        else:
            bary = np.array([1.0 - fxv, fyv, fxv - fyv])
        verts = _box_vertices(box)[_box_faces(box)[tri]]
        return bary @ verts
    return None


def _box_vertices(box) -> np.ndarray:
    return box.vertices if isinstance(box, (BoxMesh, DeformedBox)) else box


def _box_faces(box) -> np.ndarray:
    return box.faces if isinstance(box, BoxMesh) else box.template.faces


def surface_points(layout: AtlasLayout, box: BoxMesh | DeformedBox
                   ) -> tuple[np.ndarray, np.ndarray]:
    """All used texel centers mapped to the box surface.

    Returns (points (M,3) float64, texel_yx (M,2) int64) in row-major texel
    order; M = 6*l*l.
    """
    tri_map, bary_map = layout.texel_map()
    ys, xs = np.nonzero(tri_map >= 0)
    tris = tri_map[ys, xs]
    bary = bary_map[ys, xs]
    faces = _box_faces(box)
    verts = _box_vertices(box)
    pts = np.einsum("nk,nkc->nc", bary, verts[faces[tris]])
    return pts, np.column_stack([ys, xs])


def seam_texel_pairs(layout: AtlasLayout) -> list[SeamPair]:
    """The seven cut-edge pair sets, l samples each."""
    return layout.seams


def seam_pixel_indices(layout: AtlasLayout) -> tuple[np.ndarray, np.ndarray]:
    """All seam samples as two (7*l, 2) int arrays of (y, x) texels."""
    a = np.concatenate([s.pix_a[:, ::-1] for s in layout.seams])
    b = np.concatenate([s.pix_b[:, ::-1] for s in layout.seams])
    return a, b


# ---------------------------------------------------------------------------
# atlas images


@dataclass
class AtlasImage:
    """RGBA atlas, float32 in [0,1], shape (3l, 4l, 4)."""

    pixels: np.ndarray
    l: int

    def __post_init__(self):
        h, w = self.pixels.shape[:2]
        if (h, w, self.pixels.shape[2]) != (3 * self.l, 4 * self.l, 4):
            raise ValueError(f"atlas pixels must be (3l, 4l, 4), got {self.pixels.shape}")


def split_patches(img: AtlasImage | np.ndarray, l: int | None = None) -> np.ndarray:
    """(3l,4l,C) atlas -> (6,l,l,C) face patches in FACE_ORDER."""
    if isinstance(img, AtlasImage):
        pixels, l = img.pixels, img.l
    else:
        pixels = img
        if l is None:
            raise ValueError("l required for raw arrays")
    if pixels.shape[0] != 3 * l or pixels.shape[1] != 4 * l:
        raise ValueError(f"expected (3l,4l,...) = ({3*l},{4*l},...), got {pixels.shape}")
    rects = build_layout_rects(l)
    return np.stack([pixels[y0:y0 + l, x0:x0 + l] for x0, y0 in
                     (rects[f] for f in FACE_ORDER)])


def merge_patches(patches: np.ndarray, l: int | None = None) -> np.ndarray:
    """(6,l,l,C) face patches -> (3l,4l,C) atlas, zeros in the gaps."""
    if patches.shape[0] != 6 or patches.shape[1] != patches.shape[2]:
        raise ValueError(f"expected (6,l,l,C), got {patches.shape}")
    pl = patches.shape[1]
    if l is not None and l != pl:
        raise ValueError(f"patch size {pl} != l {l}")
    l = pl
    out = np.zeros((3 * l, 4 * l) + patches.shape[3:], dtype=patches.dtype)
    rects = build_layout_rects(l)
    for k, f in enumerate(FACE_ORDER):
        x0, y0 = rects[f]
        out[y0:y0 + l, x0:x0 + l] = patches[k]
    return out


def build_layout_rects(l: int) -> dict[str, tuple[int, int]]:
    return {"front": (0, l), "right": (l, l), "back": (2 * l, l),
            "left": (3 * l, l), "top": (0, 0), "bottom": (0, 2 * l)}


def save_png(img: AtlasImage, path) -> None:
    arr = np.clip(np.round(img.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGBA").save(path)


def load_png(path) -> AtlasImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGBA"), dtype=np.float32) / 255.0
    h, w = arr.shape[:2]
    if w % 4 or h % 3 or w // 4 != h // 3:
        raise ValueError(f"{path}: not a 4l x 3l atlas ({w}x{h})")
    return AtlasImage(pixels=arr, l=w // 4)
