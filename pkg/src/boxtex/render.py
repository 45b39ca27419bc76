"""Alpha-aware software ray tracer, the 12-view rig, SSIM, and color metrics.

Each deformed box is rendered with its atlas: rays skip intersections whose
texel alpha falls below the threshold (holes punched by transparency) and
shade the first passing hit with flat two-sided Lambert under one fixed
directional light. The per-triangle texel coordinates invert the atlas
parameterization used for baking, so a hit reads exactly the texel that was
baked for that surface point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import kernels
from .atlas import (FACE_TO_GEOM, GEOM_TO_FACE, AtlasImage, AtlasLayout,
                    seam_pixel_indices)
from .geom import BoxMesh, DeformedBox

LIGHT_DIR = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
AMBIENT = 0.2
ALPHA_THRESH = 0.5

# (fx, fy) cell-corner order matching slot k of the barycentric weights used
# by the texel map: even triangles cover fy >= fx, odd ones fy <= fx
_LOWER_CORNERS = ((0.0, 0.0), (0.0, 1.0), (1.0, 1.0))
_UPPER_CORNERS = ((0.0, 0.0), (1.0, 1.0), (1.0, 0.0))


@dataclass
class Camera:
    eye: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    fov_deg: float = 40.0
    width: int = 256
    height: int = 256

    def __post_init__(self):
        self.eye = np.asarray(self.eye, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if np.allclose(self.eye, self.look_at):
            raise ValueError("camera eye coincides with look_at")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"fov must be in (0, 180), got {self.fov_deg}")


@dataclass
class RenderSettings:
    background: tuple = (1.0, 1.0, 1.0)
    alpha_threshold: float = ALPHA_THRESH
    light_dir: np.ndarray = field(default_factory=lambda: LIGHT_DIR.copy())
    ambient: float = AMBIENT

    def __post_init__(self):
        if not 0.0 < self.alpha_threshold < 1.0:
            raise ValueError("alpha threshold must be in (0, 1)")


@dataclass
class TexturedPart:
    box: BoxMesh | DeformedBox
    atlas: AtlasImage
    layout: AtlasLayout


def camera_rays(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole rays, one per pixel, row-major. Returns (origins, dirs)."""
    f = cam.look_at - cam.eye
    f = f / np.linalg.norm(f)
    r = np.cross(f, cam.up)
    nr = np.linalg.norm(r)
    if nr < 1e-12:
        raise ValueError("view direction parallel to up vector")
    r = r / nr
    u = np.cross(r, f)
    half = np.tan(np.radians(cam.fov_deg) / 2.0)
    aspect = cam.width / cam.height
    xs = ((np.arange(cam.width) + 0.5) / cam.width * 2.0 - 1.0) * half * aspect
    ys = (1.0 - (np.arange(cam.height) + 0.5) / cam.height * 2.0) * half
    d = (f[None, None] + ys[:, None, None] * u[None, None]
         + xs[None, :, None] * r[None, None])
    d = d / np.linalg.norm(d, axis=2, keepdims=True)
    d = d.reshape(-1, 3)
    o = np.broadcast_to(cam.eye, d.shape).copy()
    return o, d


def shape_bbox(parts: list[TexturedPart]) -> tuple[np.ndarray, np.ndarray]:
    v = np.concatenate([p.box.vertices for p in parts], axis=0)
    return v.min(axis=0), v.max(axis=0)


def default_viewpoints(bbox: tuple[np.ndarray, np.ndarray], count: int = 12,
                       elev_deg: float = 20.0, radius_scale: float = 2.5,
                       fov_deg: float = 40.0, size: int = 256) -> list[Camera]:
    """Ring of cameras: evenly spaced azimuths at fixed elevation, z up."""
    lo = np.asarray(bbox[0], dtype=np.float64)
    hi = np.asarray(bbox[1], dtype=np.float64)
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0.0:
        raise ValueError("degenerate bounding box")
    center = (lo + hi) / 2.0
    radius = radius_scale * diag
    el = np.radians(elev_deg)
    cams = []
    for i in range(count):
        az = 2.0 * np.pi * i / count
        eye = center + radius * np.array([np.cos(el) * np.cos(az),
                                          np.cos(el) * np.sin(az),
                                          np.sin(el)])
        cams.append(Camera(eye=eye, look_at=center.copy(),
                           fov_deg=fov_deg, width=size, height=size))
    return cams


def face_triangle_uvs(layout: AtlasLayout) -> np.ndarray:
    """Per-triangle-vertex atlas texel coordinates, (12*n^2, 3, 2) as (x, y).

    Triangle t of geometry face g covers its cell with the same local
    parameterization the texel map uses, so interpolating these corners
    under the hit barycentrics lands on the texel baked for that point.
    """
    l, n = layout.l, layout.grid_n
    s = l // n
    uv = np.zeros((12 * n * n, 3, 2), dtype=np.float64)
    for geom_id in range(6):
        x0, y0 = layout.rects[GEOM_TO_FACE[geom_id]]
        for cy in range(n):
            for cx in range(n):
                cell = geom_id * n * n + cy * n + cx
                for which, corners in ((0, _LOWER_CORNERS), (1, _UPPER_CORNERS)):
                    t = 2 * cell + which
                    for k, (fx, fy) in enumerate(corners):
                        uv[t, k, 0] = x0 + (cx + fx) * s
                        uv[t, k, 1] = y0 + (cy + fy) * s
    return uv


@dataclass
class Scene:
    tris: np.ndarray         # (T, 3, 3) float64, grouped by part
    tri_uv: np.ndarray       # (T, 3, 2) float64 texel coords
    part_start: np.ndarray   # (P+1,) int32
    part_bounds: np.ndarray  # (P, 6)
    alpha: np.ndarray        # (P, 3l, 4l) float32
    rgb: np.ndarray          # (P, 3l, 4l, 3) float32
    normals: np.ndarray      # (T, 3) unit, orientation-free use only


def build_scene(parts: list[TexturedPart]) -> Scene:
    if not parts:
        raise ValueError("no parts to render")
    l = parts[0].layout.l
    tris, uvs, bounds, alphas, rgbs = [], [], [], [], []
    start = [0]
    for part in parts:
        if part.layout.l != l:
            raise ValueError("parts must share one atlas size")
        px = part.atlas.pixels
        if px.shape != (3 * l, 4 * l, 4):
            raise ValueError(f"atlas pixels {px.shape} do not match l={l}")
        v = np.asarray(part.box.vertices, dtype=np.float64)
        f = part.box.faces if isinstance(part.box, BoxMesh) else part.box.template.faces
        tris.append(v[f])
        uvs.append(np.asarray(part.layout.tri_uv, dtype=np.float64))
        start.append(start[-1] + f.shape[0])
        bounds.append(np.concatenate([v.min(axis=0) - 1e-9, v.max(axis=0) + 1e-9]))
        alphas.append(px[:, :, 3])
        rgbs.append(px[:, :, :3])
    tris = np.concatenate(tris, axis=0)
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    nrm = np.cross(e1, e2)
    ln = np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm = nrm / np.maximum(ln, 1e-30)
    return Scene(tris=tris,
                 tri_uv=np.concatenate(uvs, axis=0),
                 part_start=np.array(start, dtype=np.int32),
                 part_bounds=np.stack(bounds).astype(np.float64),
                 alpha=np.ascontiguousarray(np.stack(alphas), dtype=np.float32),
                 rgb=np.ascontiguousarray(np.stack(rgbs), dtype=np.float32),
                 normals=nrm)


def render(parts: list[TexturedPart], cam: Camera,
           settings: RenderSettings | None = None,
           scene: Scene | None = None) -> np.ndarray:
    """Returns an (H, W, 3) float32 image in [0, 1]."""
    if settings is None:
        settings = RenderSettings()
    if scene is None:
        scene = build_scene(parts)
    origins, dirs = camera_rays(cam)
    tri, _, bu, bv = kernels.first_opaque_hit(
        origins, dirs, scene.tris, scene.tri_uv, scene.part_start,
        scene.part_bounds, scene.alpha, settings.alpha_threshold)
    img = np.empty((cam.height * cam.width, 3), dtype=np.float32)
    img[:] = np.asarray(settings.background, dtype=np.float32)
    hit = np.nonzero(tri >= 0)[0]
    if hit.size:
        ht = tri[hit]
        pid = np.searchsorted(scene.part_start, ht, side="right") - 1
        u, v = bu[hit], bv[hit]
        w0 = 1.0 - u - v
        uvh = scene.tri_uv[ht]
        hx = w0 * uvh[:, 0, 0] + u * uvh[:, 1, 0] + v * uvh[:, 2, 0]
        hy = w0 * uvh[:, 0, 1] + u * uvh[:, 1, 1] + v * uvh[:, 2, 1]
        iw, ih = scene.alpha.shape[2], scene.alpha.shape[1]
        ix = np.clip(np.floor(hx).astype(np.int64), 0, iw - 1)
        iy = np.clip(np.floor(hy).astype(np.int64), 0, ih - 1)
        base = scene.rgb[pid, iy, ix]
        lam = np.abs(scene.normals[ht] @ np.asarray(settings.light_dir))
        shade = settings.ambient + (1.0 - settings.ambient) * lam
        img[hit] = base * shade[:, None].astype(np.float32)
    return img.reshape(cam.height, cam.width, 3)


def render_mesh(vertices: np.ndarray, faces: np.ndarray,
                vertex_colors: np.ndarray, cam: Camera,
                settings: RenderSettings | None = None) -> np.ndarray:
    """Ray-traces a plain triangle mesh with interpolated vertex colors.

    Ground-truth companion to `render`: same rays, same shading, colors read
    from the mesh instead of an atlas.
    """
    if settings is None:
        settings = RenderSettings()
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces)
    tris = v[f]
    nt = tris.shape[0]
    bounds = np.concatenate([v.min(axis=0) - 1e-9, v.max(axis=0) + 1e-9])
    origins, dirs = camera_rays(cam)
    tri, _, bu, bv = kernels.first_opaque_hit(
        origins, dirs, tris, np.zeros((nt, 3, 2)),
        np.array([0, nt], dtype=np.int32), bounds[None],
        np.ones((1, 1, 1), dtype=np.float32), settings.alpha_threshold)
    img = np.empty((cam.height * cam.width, 3), dtype=np.float32)
    img[:] = np.asarray(settings.background, dtype=np.float32)
    hit = np.nonzero(tri >= 0)[0]
    if hit.size:
        ht = tri[hit]
        u, bvv = bu[hit], bv[hit]
        w0 = 1.0 - u - bvv
        cols = np.asarray(vertex_colors, dtype=np.float64)[f[ht]]
        base = (w0[:, None] * cols[:, 0] + u[:, None] * cols[:, 1]
                + bvv[:, None] * cols[:, 2])
        e1 = tris[ht, 1] - tris[ht, 0]
        e2 = tris[ht, 2] - tris[ht, 0]
        nrm = np.cross(e1, e2)
        nrm = nrm / np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-30)
        lam = np.abs(nrm @ np.asarray(settings.light_dir))
        shade = settings.ambient + (1.0 - settings.ambient) * lam
        img[hit] = (base * shade[:, None]).astype(np.float32)
    return img.reshape(cam.height, cam.width, 3)


def save_image(img: np.ndarray, path) -> None:
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# image comparison

def _gauss_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode windowed mean of a (H, W) image."""
    from numpy.lib.stride_tricks import sliding_window_view
    t = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(t, g.size, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, drange: float = 1.0) -> float:
    """Mean structural similarity; channels averaged after the spatial mean."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError("image smaller than the SSIM window")
    g = _gauss_kernel(window, sigma)
    c1 = (k1 * drange) ** 2
    c2 = (k2 * drange) ** 2
    vals = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        vx = _filter_valid(x * x, g) - mx * mx
        vy = _filter_valid(y * y, g) - my * my
        vxy = _filter_valid(x * y, g) - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * vxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


def multiview_ssim(parts_a: list[TexturedPart], parts_b: list[TexturedPart],
                   cameras: list[Camera] | None = None,
                   settings: RenderSettings | None = None) -> float:
    """Mean SSIM over renders of both shapes from a shared camera ring."""
    if cameras is None:
        cameras = default_viewpoints(shape_bbox(parts_a))
    sa = build_scene(parts_a)
    sb = build_scene(parts_b)
    tot = 0.0
    for cam in cameras:
        ia = render(parts_a, cam, settings, scene=sa)
        ib = render(parts_b, cam, settings, scene=sb)
        tot += ssim(ia, ib)
    return tot / len(cameras)


# ---------------------------------------------------------------------------
# texture metrics

def seam_consistency(atlas: AtlasImage, layout: AtlasLayout) -> float:
    """Mean absolute RGB difference across the seven cut-edge pair sets."""
    pa, pb = seam_pixel_indices(layout)
    px = atlas.pixels
    ca = px[pa[:, 0], pa[:, 1], :3]
    cb = px[pb[:, 0], pb[:, 1], :3]
    return float(np.abs(ca - cb).mean())


def compatibility_score(atlases: list[AtlasImage], layout: AtlasLayout) -> float:
    """Mean pairwise L2 distance between per-part mean used-texel colors."""
    mask = layout.used_mask()
    means = [atl.pixels[mask, :3].mean(axis=0) for atl in atlases]
    if len(means) < 2:
        return 0.0
    tot, cnt = 0.0, 0
    for i in range(len(means)):
        for j in range(i + 1, len(means)):
            tot += float(np.linalg.norm(means[i] - means[j]))
            cnt += 1
    return tot / cnt
