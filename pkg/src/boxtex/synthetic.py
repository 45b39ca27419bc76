"""Procedural toy shapes and texture fixtures.

Generates small part-based datasets (chairs, tables, single blocks) as
vertex-colored OBJ meshes plus manifests, with color rules chosen to probe
specific behaviors: per-shape shared colors for compatibility checks, and a
mode where a part's proportions determine its color so geometry-conditioned
texture sampling has a ground truth. Also provides atlas painters used by
renderer tests.
"""

from __future__ import annotations

import os

import numpy as np

from .atlas import AtlasImage, AtlasLayout
from .geom import (PartMesh, register_category, save_manifest, save_obj,
                   template_box)

PALETTE = np.array([
    [0.90, 0.10, 0.10],   # red
    [0.10, 0.80, 0.15],   # green
    [0.12, 0.15, 0.90],   # blue
    [0.95, 0.85, 0.10],   # yellow
], dtype=np.float32)

# one-part category for single-part experiments
register_category("block", ("block",), seed="block")

# proportions for the geometry-selects-color fixture: tall post, flat slab,
# even cube, long plank — far apart so geometry latents separate cleanly
VARIANT_HALVES = np.array([
    [0.10, 0.10, 0.45],
    [0.45, 0.45, 0.06],
    [0.26, 0.26, 0.26],
    [0.45, 0.09, 0.20],
], dtype=np.float64)


def box_part_mesh(label: str, center, half, grid: int = 4,
                  color: np.ndarray | None = None,
                  color_jitter: float = 0.0,
                  rng: np.random.Generator | None = None) -> PartMesh:
    """Axis-aligned box part: subdivided cube scaled to center +- half."""
    tmpl = template_box(grid)
    v = tmpl.vertices * (2.0 * np.asarray(half, dtype=np.float64)) \
        + np.asarray(center, dtype=np.float64)
    cols = None
    if color is not None:
        cols = np.tile(np.asarray(color, dtype=np.float32), (v.shape[0], 1))
        if color_jitter > 0.0 and rng is not None:
            cols = cols + rng.uniform(-color_jitter, color_jitter,
                                      cols.shape).astype(np.float32)
        cols = np.clip(cols, 0.0, 1.0)
    return PartMesh(label=label, vertices=v, faces=tmpl.faces, colors=cols)


def _chair_parts(rng: np.random.Generator) -> list[tuple[str, np.ndarray, np.ndarray]]:
    j = lambda s: rng.uniform(1.0 - s, 1.0 + s)
    seat_h = 0.40 * j(0.15)
    seat_half = np.array([0.32 * j(0.15), 0.32 * j(0.15), 0.045 * j(0.2)])
    back_h = 0.55 * j(0.15)
    leg_half = np.array([0.035 * j(0.2), 0.035 * j(0.2), seat_h / 2])
    lx, ly = seat_half[0] - leg_half[0], seat_half[1] - leg_half[1]
    parts = [
        ("seat", np.array([0.0, 0.0, seat_h]), seat_half),
        ("back", np.array([-seat_half[0] + 0.03, 0.0,
                           seat_h + seat_half[2] + back_h / 2]),
         np.array([0.03 * j(0.2), seat_half[1] * 0.95, back_h / 2])),
        ("leg_front_left", np.array([lx, -ly, seat_h / 2]), leg_half),
        ("leg_front_right", np.array([lx, ly, seat_h / 2]), leg_half),
        ("leg_back_left", np.array([-lx, -ly, seat_h / 2]), leg_half),
        ("leg_back_right", np.array([-lx, ly, seat_h / 2]), leg_half),
    ]
    return parts


def _table_parts(rng: np.random.Generator) -> list[tuple[str, np.ndarray, np.ndarray]]:
    j = lambda s: rng.uniform(1.0 - s, 1.0 + s)
    top_h = 0.55 * j(0.15)
    top_half = np.array([0.45 * j(0.15), 0.35 * j(0.15), 0.035 * j(0.2)])
    leg_half = np.array([0.04 * j(0.2), 0.04 * j(0.2), top_h / 2])
    lx, ly = top_half[0] - 0.06, top_half[1] - 0.06
    return [
        ("tabletop", np.array([0.0, 0.0, top_h]), top_half),
        ("leg_front_left", np.array([lx, -ly, top_h / 2]), leg_half),
        ("leg_front_right", np.array([lx, ly, top_h / 2]), leg_half),
        ("leg_back_left", np.array([-lx, -ly, top_h / 2]), leg_half),
        ("leg_back_right", np.array([-lx, ly, top_h / 2]), leg_half),
    ]


def toy_shape(category: str, rng: np.random.Generator,
              color_mode: str = "shared", grid: int = 4,
              drop_parts: bool = False) -> tuple[list[PartMesh], dict]:
    """One toy shape. Returns (parts, info).

    color_mode:
      shared   - every part gets the same palette color (info['color'])
      per_part - each part an independent palette color
    drop_parts randomly removes one non-seed leg to vary structure.
    """
    if category == "chair":
        defs = _chair_parts(rng)
    elif category == "table":
        defs = _table_parts(rng)
    else:
        raise ValueError(f"no toy generator for category {category!r}")
    if drop_parts and rng.random() < 0.5:
        k = rng.integers(2, len(defs))
        defs = [d for i, d in enumerate(defs) if i != k]
    info: dict = {}
    parts = []
    if color_mode == "shared":
        ci = int(rng.integers(0, len(PALETTE)))
        info["color"] = ci
        for label, c, h in defs:
            parts.append(box_part_mesh(label, c, h, grid, PALETTE[ci],
                                       color_jitter=0.02, rng=rng))
    elif color_mode == "per_part":
        info["colors"] = {}
        for label, c, h in defs:
            ci = int(rng.integers(0, len(PALETTE)))
            info["colors"][label] = ci
            parts.append(box_part_mesh(label, c, h, grid, PALETTE[ci],
                                       color_jitter=0.02, rng=rng))
    else:
        raise ValueError(f"unknown color_mode {color_mode!r}")
    return parts, info


def variant_block(variant: int, rng: np.random.Generator,
                  grid: int = 4) -> PartMesh:
    """Single box whose proportions pick its color: variant v is colored
    PALETTE[v]. Small size jitter keeps geometry latents non-degenerate."""
    half = VARIANT_HALVES[variant] * rng.uniform(0.92, 1.08, 3)
    return box_part_mesh("block", np.zeros(3), half, grid, PALETTE[variant],
                         color_jitter=0.02, rng=rng)


def write_shape(root: str | os.PathLike, shape_id: str, category: str,
                parts: list[PartMesh]) -> str:
    """Writes part OBJs and a manifest; returns the manifest path."""
    d = os.path.join(os.fspath(root), shape_id)
    os.makedirs(d, exist_ok=True)
    entries = []
    for p in parts:
        fn = f"{p.label}.obj"
        save_obj(os.path.join(d, fn), p.vertices, p.faces, colors=p.colors)
        entries.append({"label": p.label, "mesh": fn})
    mpath = os.path.join(d, "manifest.json")
    save_manifest(mpath, category, entries)
    return mpath


def write_toy_dataset(root: str | os.PathLike, category: str, count: int,
                      rng: np.random.Generator, color_mode: str = "shared",
                      grid: int = 4, drop_parts: bool = False
                      ) -> tuple[list[str], list[dict]]:
    """Writes `count` toy shapes under root; returns (manifests, infos)."""
    manifests, infos = [], []
    for i in range(count):
        parts, info = toy_shape(category, rng, color_mode, grid, drop_parts)
        manifests.append(write_shape(root, f"shape_{i:04d}", category, parts))
        infos.append(info)
    return manifests, infos


def write_block_dataset(root: str | os.PathLike, count: int,
                        rng: np.random.Generator, grid: int = 4
                        ) -> tuple[list[str], list[int]]:
    """Blocks cycling through the 4 proportion/color variants."""
    manifests, variants = [], []
    for i in range(count):
        v = i % len(PALETTE)
        part = variant_block(v, rng, grid)
        manifests.append(write_shape(root, f"shape_{i:04d}", "block", [part]))
        variants.append(v)
    return manifests, variants


def nearest_palette(rgb: np.ndarray) -> int:
    """Index of the palette color closest to an RGB triple."""
    d = np.linalg.norm(PALETTE - np.asarray(rgb, dtype=np.float32)[None], axis=1)
    return int(np.argmin(d))


# ---------------------------------------------------------------------------
# atlas painters for renderer tests

def solid_atlas(layout: AtlasLayout, rgb, alpha: float = 1.0) -> AtlasImage:
    px = np.zeros((layout.height, layout.width, 4), dtype=np.float32)
    px[:, :, :3] = np.asarray(rgb, dtype=np.float32)
    px[:, :, 3] = alpha
    return AtlasImage(pixels=px, l=layout.l)


def checker_alpha_atlas(layout: AtlasLayout, rgb, cell: int,
                        faces: tuple[str, ...] = ("front",)) -> AtlasImage:
    """Solid color atlas with a checkerboard alpha mask on chosen faces;
    cells with even (row+col) parity are transparent."""
    img = solid_atlas(layout, rgb, 1.0)
    l = layout.l
    fy, fx = np.mgrid[0:l, 0:l]
    mask = (((fy // cell) + (fx // cell)) % 2).astype(np.float32)
    for fname in faces:
        x0, y0 = layout.rects[fname]
        img.pixels[y0:y0 + l, x0:x0 + l, 3] = mask
    return img
