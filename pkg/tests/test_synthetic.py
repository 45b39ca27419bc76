import numpy as np
import pytest

from boxtex.geom import load_shape
from boxtex.synthetic import (PALETTE, VARIANT_HALVES, box_part_mesh,
                              checker_alpha_atlas, nearest_palette,
                              solid_atlas, toy_shape, variant_block,
                              write_block_dataset, write_toy_dataset)


def test_palette_colors_are_far_apart():
    assert PALETTE.shape == (4, 3)
    assert PALETTE.min() >= 0.0 and PALETTE.max() <= 1.0
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.linalg.norm(PALETTE[i] - PALETTE[j]) > 0.5


def test_box_part_mesh_geometry():
    p = box_part_mesh("seat", [0.1, -0.2, 0.5], [0.3, 0.2, 0.05])
    lo, hi = p.vertices.min(axis=0), p.vertices.max(axis=0)
    assert np.allclose((lo + hi) / 2, [0.1, -0.2, 0.5], atol=1e-12)
    assert np.allclose((hi - lo) / 2, [0.3, 0.2, 0.05], atol=1e-12)
    assert p.label == "seat"
    assert p.colors is None


def test_box_part_mesh_color_jitter(rng):
    p = box_part_mesh("block", [0, 0, 0], [1, 1, 1], color=PALETTE[2],
                      color_jitter=0.02, rng=rng)
    assert p.colors.shape == (p.vertices.shape[0], 3)
    assert np.all(np.abs(p.colors - PALETTE[2]) <= 0.02 + 1e-6)
    assert p.colors.min() >= 0.0 and p.colors.max() <= 1.0


def test_toy_chair_parts(rng):
    parts, info = toy_shape("chair", rng)
    labels = [p.label for p in parts]
    assert labels[0] == "seat" and labels[1] == "back"
    assert len(labels) == 6 and len(set(labels)) == 6
    assert sum(1 for x in labels if x.startswith("leg")) == 4
    assert 0 <= info["color"] < 4
    for p in parts:
        assert np.all(np.abs(p.colors - PALETTE[info["color"]]) <= 0.02 + 1e-6)


def test_toy_table_parts(rng):
    parts, _ = toy_shape("table", rng)
    labels = [p.label for p in parts]
    assert labels[0] == "tabletop" and len(labels) == 5


def test_toy_shape_per_part_colors(rng):
    parts, info = toy_shape("chair", rng, color_mode="per_part")
    assert set(info["colors"]) == {p.label for p in parts}
    for p in parts:
        ci = info["colors"][p.label]
        assert np.all(np.abs(p.colors - PALETTE[ci]) <= 0.02 + 1e-6)


def test_toy_shape_bad_args(rng):
    with pytest.raises(ValueError, match="category"):
        toy_shape("lamp", rng)
    with pytest.raises(ValueError, match="color_mode"):
        toy_shape("chair", rng, color_mode="rainbow")


def test_drop_parts_never_removes_seed(rng):
    sizes = set()
    for _ in range(30):
        parts, _ = toy_shape("chair", rng, drop_parts=True)
        labels = [p.label for p in parts]
        assert "seat" in labels and "back" in labels
        sizes.add(len(labels))
    assert sizes == {5, 6}


def test_variant_block_proportions(rng):
    for v in range(4):
        p = variant_block(v, rng)
        half = (p.vertices.max(axis=0) - p.vertices.min(axis=0)) / 2
        assert np.all(half >= VARIANT_HALVES[v] * 0.92 - 1e-9)
        assert np.all(half <= VARIANT_HALVES[v] * 1.08 + 1e-9)
        assert nearest_palette(p.colors.mean(axis=0)) == v


def test_variant_proportions_are_distinct():
    # aspect signatures differ enough that a geometry code can separate them
    aspect = VARIANT_HALVES / VARIANT_HALVES.sum(axis=1, keepdims=True)
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.abs(aspect[i] - aspect[j]).sum() > 0.25


def test_write_toy_dataset_roundtrip(tmp_path, rng):
    manifests, infos = write_toy_dataset(tmp_path, "chair", 3, rng)
    assert len(manifests) == 3 and len(infos) == 3
    for mpath in manifests:
        shape = load_shape(mpath)
        assert shape.category == "chair"
        # parts come back in the canonical category order
        assert shape.labels()[:2] == ["back", "seat"]
        for p in shape.parts:
            assert p.colors is not None
            assert p.faces.shape[1] == 3


def test_write_block_dataset_cycles_variants(tmp_path, rng):
    manifests, variants = write_block_dataset(tmp_path, 6, rng)
    assert variants == [0, 1, 2, 3, 0, 1]
    shape = load_shape(manifests[4])
    assert shape.category == "block"
    assert shape.labels() == ["block"]
    assert nearest_palette(shape.parts[0].colors.mean(axis=0)) == 0


def test_nearest_palette_is_stable_under_jitter(rng):
    for i in range(4):
        assert nearest_palette(PALETTE[i]) == i
        assert nearest_palette(PALETTE[i] + rng.uniform(-0.05, 0.05, 3)) == i


def test_solid_atlas_contents(layout16):
    img = solid_atlas(layout16, (0.2, 0.4, 0.6), alpha=0.7)
    assert img.pixels.shape == (48, 64, 4)
    assert np.allclose(img.pixels[:, :, :3], [0.2, 0.4, 0.6], atol=1e-7)
    assert np.allclose(img.pixels[:, :, 3], 0.7)


def test_checker_alpha_mask_parity(layout16):
    img = checker_alpha_atlas(layout16, (1, 0, 0), 4, faces=("front",))
    x0, y0 = layout16.rects["front"]
    face = img.pixels[y0:y0 + 16, x0:x0 + 16, 3]
    fy, fx = np.mgrid[0:16, 0:16]
    expect = (((fy // 4) + (fx // 4)) % 2).astype(np.float32)
    assert np.array_equal(face, expect)
    # other faces stay opaque
    x1, y1 = layout16.rects["top"]
    assert np.all(img.pixels[y1:y1 + 16, x1:x1 + 16, 3] == 1.0)
