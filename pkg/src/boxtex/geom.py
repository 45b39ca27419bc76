"""Part meshes, template boxes, box fitting, and geometry vectors.

A part is approximated by deforming a fixed-topology box mesh onto it; the
deformed box carries the part's texture atlas and its flattened, normalized
vertex displacements are the geometry feature consumed by the VAEs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import kernels

# geometry face order; the atlas maps these ids onto its own rect order
FACE_AXES = ("+x", "-x", "+y", "-y", "+z", "-z")


@dataclass
class PartMesh:
    """Triangle mesh for one semantic part.

    colors are per-vertex RGB in [0,1]; uvs are per-corner texture
    coordinates (F,3,2) in OBJ convention (v up); texture is an RGB image
    in [0,1]. All optional.
    """

    label: str
    vertices: np.ndarray                 # (V, 3) float64
    faces: np.ndarray                    # (F, 3) int32
    colors: np.ndarray | None = None     # (V, 3) float32
    uvs: np.ndarray | None = None        # (F, 3, 2) float64
    texture: np.ndarray | None = None    # (H, W, 3) float32

    def triangle_array(self) -> np.ndarray:
        return np.ascontiguousarray(self.vertices[self.faces], dtype=np.float64)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class BoxMesh:
    """Template box: unit cube split into an n-by-n grid per face.

    Faces come in the order +x,-x,+y,-y,+z,-z, row-major within each face;
    vertices along cube edges are shared, so the mesh is watertight.
    """

    grid_n: int
    vertices: np.ndarray   # (V, 3) float64
    faces: np.ndarray      # (F, 3) int32
    face_ids: np.ndarray   # (F,) int32 in 0..5


@dataclass
class DeformedBox:
    """Template box plus per-vertex displacements (connectivity unchanged)."""

    template: BoxMesh
    displacements: np.ndarray  # (V, 3) float64

    @property
    def vertices(self) -> np.ndarray:
        return self.template.vertices + self.displacements

    def triangle_array(self) -> np.ndarray:
        return np.ascontiguousarray(self.vertices[self.template.faces],
                                    dtype=np.float64)


@dataclass
class GeometryVector:
    """Flattened normalized box shape: (P - centroid)/radius - V0/radius0.

    norm_center/norm_scale record the removed similarity so apply() can place
    the box back at its original pose.
    """

    values: np.ndarray        # (3*V,) float32
    norm_center: np.ndarray   # (3,) float64
    norm_scale: float
    grid_n: int


# integer lattice keys make shared edge/corner vertices exact, no rounding.
# Key k maps to coordinate k/n - 0.5; rows (i) and cols (j) follow the same
# axes the atlas uses to parameterize each face.
_FACE_KEY = {
    0: lambda n, i, j: (n, j, n - i),        # +x
    1: lambda n, i, j: (0, n - j, n - i),    # -x
    2: lambda n, i, j: (n - j, n, n - i),    # +y
    3: lambda n, i, j: (j, 0, n - i),        # -y
    4: lambda n, i, j: (i, j, n),            # +z
    5: lambda n, i, j: (n - i, j, 0),        # -z
}


def template_box(grid_n: int) -> BoxMesh:
    """Unit cube centered at the origin, 2*n*n triangles per face."""
    if grid_n < 1:
        raise ValueError("grid_n must be >= 1")
    n = grid_n
    key_to_idx: dict[tuple[int, int, int], int] = {}
    verts: list[tuple[int, int, int]] = []
    faces = []
    face_ids = []

    def vid(key: tuple[int, int, int]) -> int:
        got = key_to_idx.get(key)
        if got is None:
            got = len(verts)
            key_to_idx[key] = got
            verts.append(key)
        return got

    for f in range(6):
        keyf = _FACE_KEY[f]
        grid = [[vid(keyf(n, i, j)) for j in range(n + 1)] for i in range(n + 1)]
        for i in range(n):
            for j in range(n):
                a = grid[i][j]
                b = grid[i][j + 1]
                c = grid[i + 1][j + 1]
                d = grid[i + 1][j]
                faces.append((a, d, c))   # both wound outward
                faces.append((a, c, b))
                face_ids.extend((f, f))

    v = np.asarray(verts, dtype=np.float64) / n - 0.5
    return BoxMesh(
        grid_n=n,
        vertices=v,
        faces=np.asarray(faces, dtype=np.int32),
        face_ids=np.asarray(face_ids, dtype=np.int32),
    )


def edge_use_counts(faces: np.ndarray) -> dict[tuple[int, int], int]:
    """How many triangles use each undirected edge; 2 everywhere = watertight."""
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in faces:
        for e in ((a, b), (b, c), (c, a)):
            e = (min(e), max(e))
            counts[e] = counts.get(e, 0) + 1
    return counts


def is_watertight(faces: np.ndarray) -> bool:
    return all(c == 2 for c in edge_use_counts(faces).values())


# ---------------------------------------------------------------------------
# OBJ / manifest I/O


def load_obj(path: str | os.PathLike, label: str = "",
             texture: str | None = None) -> PartMesh:
    """Triangle OBJ loader.

    Accepts v lines with 3 floats or 6 (position + vertex color), vt lines,
    and f lines indexing v or v/vt (vn indices are ignored). Non-triangle
    faces are an error; zero-area triangles are dropped.
    """
    path = os.fspath(path)
    vs: list[list[float]] = []
    cols: list[list[float]] = []
    vts: list[list[float]] = []
    fv: list[list[int]] = []
    fvt: list[list[int]] = []
    any_color = False
    mtllib = None
    usemtl = None

    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            tok = raw.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                vals = [float(x) for x in tok[1:]]
                if len(vals) not in (3, 6):
                    raise ValueError(f"{path}: bad v line: {raw.strip()}")
                vs.append(vals[:3])
                if len(vals) == 6:
                    cols.append(vals[3:])
                    any_color = True
                else:
                    cols.append([0.5, 0.5, 0.5])
            elif tok[0] == "vt":
                vts.append([float(tok[1]), float(tok[2])])
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise ValueError(f"{path}: only triangles supported: {raw.strip()}")
                vi, ti = [], []
                for t in tok[1:]:
                    fields = t.split("/")
                    vi.append(int(fields[0]))
                    if len(fields) > 1 and fields[1]:
                        ti.append(int(fields[1]))
                fv.append(vi)
                if len(ti) == 3:
                    fvt.append(ti)
                elif ti:
                    raise ValueError(f"{path}: partial vt indices: {raw.strip()}")
            elif tok[0] == "mtllib":
                mtllib = tok[1]
            elif tok[0] == "usemtl" and usemtl is None:
                usemtl = tok[1]

    if not vs or not fv:
        raise ValueError(f"{path}: empty mesh")
    vertices = np.asarray(vs, dtype=np.float64)
    nv = len(vs)

    def resolve(idx: int, count: int) -> int:
        r = idx - 1 if idx > 0 else count + idx
        if not 0 <= r < count:
            raise ValueError(f"{path}: face index {idx} out of range")
        return r

    faces = np.asarray([[resolve(i, nv) for i in f] for f in fv], dtype=np.int32)
    uvs = None
    if fvt:
        if len(fvt) != len(fv):
            raise ValueError(f"{path}: vt indices on only some faces")
        uvn = np.asarray(vts, dtype=np.float64)
        uvs = np.stack([uvn[[resolve(i, len(vts)) for i in f]] for f in fvt])

    # drop degenerate triangles; texture/uv rows go with them
    tri = vertices[faces]
    area2 = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]),
                           axis=1)
    scale = float(np.linalg.norm(vertices.max(0) - vertices.min(0))) or 1.0
    keep = area2 > 1e-12 * scale * scale
    faces = faces[keep]
    if uvs is not None:
        uvs = uvs[keep]
    if faces.shape[0] == 0:
        raise ValueError(f"{path}: all triangles degenerate")

    tex_img = None
    tex_path = texture
    if tex_path is None and mtllib is not None:
        mtl = os.path.join(os.path.dirname(path), mtllib)
        if os.path.exists(mtl):
            tex_path = _mtl_texture(mtl, usemtl)
            if tex_path is not None:
                tex_path = os.path.join(os.path.dirname(mtl), tex_path)
    if tex_path is not None and os.path.exists(tex_path):
        with Image.open(tex_path) as im:
            tex_img = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0

    return PartMesh(
        label=label,
        vertices=vertices,
        faces=faces,
        colors=np.asarray(cols, dtype=np.float32) if any_color else None,
        uvs=uvs,
        texture=tex_img,
    )


def _mtl_texture(mtl_path: str, material: str | None) -> str | None:
    """map_Kd of the named material (or the first one)."""
    current = None
    first_map = None
    with open(mtl_path, "r", encoding="utf-8") as fh:
        for raw in fh:
            tok = raw.split()
            if not tok:
                continue
            if tok[0] == "newmtl":
                current = tok[1]
            elif tok[0] == "map_Kd" and len(tok) > 1:
                if first_map is None:
                    first_map = tok[-1]
                if material is not None and current == material:
                    return tok[-1]
    return first_map


def save_obj(path: str | os.PathLike, vertices: np.ndarray, faces: np.ndarray,
             colors: np.ndarray | None = None,
             uvs: np.ndarray | None = None,
             texture_file: str | None = None) -> None:
    """Writes a triangle OBJ; with uvs+texture_file also writes a sidecar MTL."""
    path = os.fspath(path)
    lines = []
    if uvs is not None and texture_file is not None:
        mtl_name = os.path.splitext(os.path.basename(path))[0]
        mtl_path = os.path.splitext(path)[0] + ".mtl"
        with open(mtl_path, "w", encoding="utf-8") as fh:
            fh.write(f"newmtl {mtl_name}\nKd 1 1 1\nmap_Kd {texture_file}\n")
        lines.append(f"mtllib {os.path.basename(mtl_path)}")
        lines.append(f"usemtl {mtl_name}")
    if colors is not None:
        for p, c in zip(vertices, colors):
            lines.append("v %.8g %.8g %.8g %.6g %.6g %.6g"
                         % (p[0], p[1], p[2], c[0], c[1], c[2]))
    else:
        for p in vertices:
            lines.append("v %.8g %.8g %.8g" % (p[0], p[1], p[2]))
    if uvs is not None:
        for corner in uvs.reshape(-1, 2):
            lines.append("vt %.8g %.8g" % (corner[0], corner[1]))
        for fi, f in enumerate(faces):
            t = 3 * fi
            lines.append("f %d/%d %d/%d %d/%d"
                         % (f[0] + 1, t + 1, f[1] + 1, t + 2, f[2] + 1, t + 3))
    else:
        for f in faces:
            lines.append("f %d %d %d" % (f[0] + 1, f[1] + 1, f[2] + 1))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class CategorySpec:
    parts: tuple[str, ...]
    seed: str | None = None


_CATEGORIES: dict[str, CategorySpec] = {
    "chair": CategorySpec(
        parts=("back", "seat", "leg_front_left", "leg_front_right",
               "leg_back_left", "leg_back_right"),
        seed="seat",
    ),
    "table": CategorySpec(
        parts=("tabletop", "leg_front_left", "leg_front_right",
               "leg_back_left", "leg_back_right"),
        seed="tabletop",
    ),
}


def register_category(name: str, parts: tuple[str, ...],
                      seed: str | None = None) -> None:
    _CATEGORIES[name] = CategorySpec(parts=tuple(parts), seed=seed)


def category_spec(name: str) -> CategorySpec:
    try:
        return _CATEGORIES[name]
    except KeyError:
        raise ValueError(
            f"unknown category {name!r}; known: {sorted(_CATEGORIES)}") from None


@dataclass
class LoadedShape:
    category: str
    parts: list[PartMesh] = field(default_factory=list)

    def labels(self) -> list[str]:
        return [p.label for p in self.parts]


def load_shape(manifest_path: str | os.PathLike) -> LoadedShape:
    """Reads a shape manifest and its part meshes, canonically ordered."""
    manifest_path = os.fspath(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "category" not in doc or "parts" not in doc:
        raise ValueError(f"{manifest_path}: manifest needs category and parts")
    spec = category_spec(doc["category"])
    base = os.path.dirname(manifest_path)
    by_label: dict[str, PartMesh] = {}
    for entry in doc["parts"]:
        label = entry["label"]
        if label not in spec.parts:
            raise ValueError(
                f"{manifest_path}: part {label!r} not in canonical list "
                f"for {doc['category']!r}: {list(spec.parts)}")
        if label in by_label:
            raise ValueError(f"{manifest_path}: duplicate part {label!r}")
        tex = entry.get("texture")
        by_label[label] = load_obj(
            os.path.join(base, entry["mesh"]), label=label,
            texture=os.path.join(base, tex) if tex else None)
    ordered = [by_label[lbl] for lbl in spec.parts if lbl in by_label]
    return LoadedShape(category=doc["category"], parts=ordered)


def save_manifest(path: str | os.PathLike, category: str,
                  entries: list[dict]) -> None:
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        json.dump({"category": category, "parts": entries}, fh, indent=2)
        fh.write("\n")


def seed_label(category: str, labels: list[str],
               box_centers: dict[str, np.ndarray] | None = None) -> str:
    """Which part conditions the others' textures.

    The registry answer wins when that part is present; otherwise the part
    whose fitted-box center sits nearest the centroid of all box centers.
    """
    spec = _CATEGORIES.get(category)
    if spec is not None and spec.seed in labels:
        return spec.seed
    if not box_centers:
        raise ValueError("seed selection needs fitted-box centers")
    centers = np.stack([box_centers[lbl] for lbl in labels])
    middle = centers.mean(axis=0)
    d = np.linalg.norm(centers - middle, axis=1)
    return labels[int(np.argmin(d))]


# ---------------------------------------------------------------------------
# box fitting


def fit_deformed_box(part: PartMesh, grid_n: int, iters: int = 20,
                     lam: float = 0.5, mu: float = 0.3) -> DeformedBox:
    """Shrink-wraps the template box onto the part surface.

    Starts from the part's bounding box. Each iteration moves every vertex a
    fraction lam toward its closest point on the part, then applies uniform
    Laplacian smoothing with weight mu, restricted to the tangent plane of
    the nearest surface point so the smoothing cannot pull a converged fit
    off the surface. Smoothing is also damped where neighboring surface
    normals disagree: an unguarded tangential pull slides vertices off sharp
    part edges and erodes corners. A final projection pass leaves every
    vertex exactly on the part.
    """
    tmpl = template_box(grid_n)
    tris = part.triangle_array()
    bvh = kernels.build_bvh(tris)
    tri_n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    tri_n /= np.maximum(np.linalg.norm(tri_n, axis=1, keepdims=True), 1e-30)

    lo, hi = part.bbox()
    verts = tmpl.vertices * (hi - lo)[None, :] + ((hi + lo) * 0.5)[None, :]

    offsets, flat = _neighbor_table(tmpl)
    vid = np.repeat(np.arange(offsets.size - 1), np.diff(offsets))
    for _ in range(iters):
        q, _, _, _ = kernels.closest_point_bvh(bvh, tris, verts)
        verts = verts + lam * (q - verts)
        _, _, tri_idx, _ = kernels.closest_point_bvh(bvh, tris, verts)
        normals = tri_n[tri_idx]
        mean = _neighbor_mean(verts, (offsets, flat))
        delta = mean - verts
        delta -= np.sum(delta * normals, axis=1, keepdims=True) * normals
        dots = np.sum(normals[vid] * normals[flat], axis=1)
        agree = np.minimum.reduceat(np.maximum(dots, 0.0), offsets[:-1])
        verts = verts + mu * agree[:, None] * delta
    q, _, _, _ = kernels.closest_point_bvh(bvh, tris, verts)
    return DeformedBox(template=tmpl, displacements=q - tmpl.vertices)


def _neighbor_table(box: BoxMesh) -> tuple[np.ndarray, np.ndarray]:
    """CSR-style (offsets, flat neighbor ids) from the edge graph."""
    nbrs: list[set[int]] = [set() for _ in range(box.vertices.shape[0])]
    for a, b, c in box.faces:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    offsets = np.zeros(len(nbrs) + 1, dtype=np.int64)
    flat = []
    for i, s in enumerate(nbrs):
        ordered = sorted(s)
        flat.extend(ordered)
        offsets[i + 1] = len(flat)
    return offsets, np.asarray(flat, dtype=np.int64)


def _neighbor_mean(verts: np.ndarray, nb: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    offsets, flat = nb
    sums = np.add.reduceat(verts[flat], offsets[:-1], axis=0)
    counts = np.diff(offsets).astype(np.float64)
    return sums / counts[:, None]


def sample_part_color(part: PartMesh, tri_idx: np.ndarray, bary: np.ndarray
                      ) -> np.ndarray:
    """Source color at surface points given as (triangle, barycentric).

    Prefers the part's texture (bilinear), then vertex colors, then gray.
    Returns (N, 3) float32 in [0,1].
    """
    n = tri_idx.shape[0]
    if part.texture is not None and part.uvs is not None:
        uv = np.einsum("nk,nkc->nc", bary, part.uvs[tri_idx])
        h, w = part.texture.shape[:2]
        # OBJ v axis points up; image rows point down
        fx = uv[:, 0] * w - 0.5
        fy = (1.0 - uv[:, 1]) * h - 0.5
        x0 = np.floor(fx).astype(np.int64)
        y0 = np.floor(fy).astype(np.int64)
        tx = (fx - x0)[:, None]
        ty = (fy - y0)[:, None]
        x0c = np.clip(x0, 0, w - 1)
        x1c = np.clip(x0 + 1, 0, w - 1)
        y0c = np.clip(y0, 0, h - 1)
        y1c = np.clip(y0 + 1, 0, h - 1)
        c00 = part.texture[y0c, x0c]
        c01 = part.texture[y0c, x1c]
        c10 = part.texture[y1c, x0c]
        c11 = part.texture[y1c, x1c]
        top = c00 * (1 - tx) + c01 * tx
        bot = c10 * (1 - tx) + c11 * tx
        return (top * (1 - ty) + bot * ty).astype(np.float32)
    if part.colors is not None:
        corner = part.colors[part.faces[tri_idx]]
        return np.einsum("nk,nkc->nc", bary.astype(np.float32),
                         corner).astype(np.float32)
    return np.full((n, 3), 0.5, dtype=np.float32)


# ---------------------------------------------------------------------------
# geometry vectors


def _normalize(verts: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    center = verts.mean(axis=0)
    radius = float(np.max(np.linalg.norm(verts - center, axis=1)))
    radius = max(radius, 1e-12)
    return (verts - center) / radius, center, radius


def geometry_vector(box: DeformedBox) -> GeometryVector:
    """Similarity-invariant flattening of the deformed box."""
    q, center, radius = _normalize(box.vertices)
    q0, _, _ = _normalize(box.template.vertices)
    values = (q - q0).astype(np.float32).reshape(-1)
    return GeometryVector(values=values, norm_center=center,
                          norm_scale=radius, grid_n=box.template.grid_n)


def apply_geometry_vector(gv: GeometryVector, template: BoxMesh | None = None
                          ) -> DeformedBox:
    """Inverse of geometry_vector up to float32 rounding of the values."""
    tmpl = template if template is not None else template_box(gv.grid_n)
    if tmpl.grid_n != gv.grid_n:
        raise ValueError("grid_n mismatch between vector and template")
    q0, _, _ = _normalize(tmpl.vertices)
    q = gv.values.reshape(-1, 3).astype(np.float64) + q0
    verts = q * gv.norm_scale + gv.norm_center
    return DeformedBox(template=tmpl, displacements=verts - tmpl.vertices)
