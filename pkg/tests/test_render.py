import numpy as np
import pytest

from boxtex.atlas import build_layout
from boxtex.geom import DeformedBox, template_box
from boxtex.render import (AMBIENT, LIGHT_DIR, Camera, RenderSettings,
                           TexturedPart, build_scene, camera_rays,
                           compatibility_score, default_viewpoints,
                           multiview_ssim, render, render_mesh,
                           seam_consistency, shape_bbox, ssim)
from boxtex.synthetic import checker_alpha_atlas, solid_atlas


def _cube_part(layout, atlas, scale=1.0):
    tpl = template_box(layout.grid_n)
    disp = tpl.vertices * (scale - 1.0)
    return TexturedPart(box=DeformedBox(template=tpl, displacements=disp),
                        atlas=atlas, layout=layout)


def _front_cam(size=64, dist=3.0):
    # front face of the template cube is +x
    return Camera(eye=np.array([dist, 0.0, 0.0]),
                  look_at=np.zeros(3), width=size, height=size)


def test_camera_rays_geometry():
    cam = _front_cam(size=65)
    origins, dirs = camera_rays(cam)
    assert origins.shape == (65 * 65, 3)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
    # the center pixel of an odd image looks straight down the view axis
    center = dirs[65 * 32 + 32]
    assert np.allclose(center, [-1.0, 0.0, 0.0], atol=1e-12)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(eye=np.zeros(3), look_at=np.zeros(3))
    with pytest.raises(ValueError):
        Camera(eye=np.ones(3), look_at=np.zeros(3), fov_deg=240.0)


def test_default_viewpoints_rig(layout32):
    part = _cube_part(layout32, solid_atlas(layout32, (1.0, 0.0, 0.0)))
    bbox = shape_bbox([part])
    cams = default_viewpoints(bbox, count=12, size=128)
    assert len(cams) == 12
    center = 0.5 * (bbox[0] + bbox[1])
    diag = float(np.linalg.norm(bbox[1] - bbox[0]))
    for cam in cams:
        assert cam.width == cam.height == 128
        assert np.allclose(cam.look_at, center, atol=1e-12)
        r = np.linalg.norm(cam.eye - center)
        assert r == pytest.approx(2.5 * diag, rel=1e-9)
        # elevation 20 degrees above the horizontal plane
        z = (cam.eye - center)[2]
        assert z / r == pytest.approx(np.sin(np.radians(20.0)), rel=1e-9)
    # azimuths cover the circle: twelve distinct directions
    az = [np.arctan2((c.eye - center)[1], (c.eye - center)[0]) for c in cams]
    assert len(set(np.round(np.degrees(az), 6))) == 12


def test_default_viewpoints_rejects_degenerate_bbox():
    with pytest.raises(ValueError):
        default_viewpoints((np.zeros(3), np.zeros(3)))


def test_fully_transparent_part_is_invisible(layout32):
    atlas = solid_atlas(layout32, (0.5, 0.2, 0.2), alpha=0.0)
    part = _cube_part(layout32, atlas)
    img = render([part], _front_cam())
    assert np.array_equal(img, np.ones_like(img))


def test_front_face_shade_analytic(layout32):
    # facing the +x face head-on: shade = ambient + (1-ambient)*|n.l|
    part = _cube_part(layout32, solid_atlas(layout32, (1.0, 1.0, 1.0)))
    img = render([part], _front_cam())
    n_dot_l = abs(np.dot([1.0, 0.0, 0.0], LIGHT_DIR))
    expect = AMBIENT + (1.0 - AMBIENT) * n_dot_l
    center = img[32, 32]
    assert np.allclose(center, expect, atol=1e-5)
    assert expect == pytest.approx(0.6618802, abs=1e-6)


def test_two_sided_shading(layout32):
    # from inside the cube the same face shades identically (|n.l|)
    part = _cube_part(layout32, solid_atlas(layout32, (1.0, 1.0, 1.0)))
    outside = render([part], _front_cam())[32, 32]
    inside = render([part], Camera(eye=np.array([0.45, 0.0, 0.0]),
                                   look_at=np.array([1.0, 0.0, 0.0]),
                                   width=64, height=64))[32, 32]
    assert np.allclose(outside, inside, atol=1e-6)


def test_checkerboard_alpha_shows_background(layout32):
    # checker alpha on the front face, back face fully transparent: rays
    # through the holes exit the box and show the white background
    atlas = checker_alpha_atlas(layout32, (0.8, 0.1, 0.1), 8)
    bx, by = layout32.rects["back"]
    atlas.pixels[by:by + 32, bx:bx + 32, 3] = 0.0
    part = _cube_part(layout32, atlas)
    img = render([part], _front_cam(size=128))
    # central crop maps onto the face interior: half the cells transparent
    crop = img[32:96, 32:96]
    white = np.all(crop > 0.999, axis=2).mean()
    assert 0.3 < white < 0.7
    red = (crop[..., 0] > crop[..., 2] + 0.1).mean()
    assert 0.3 < red < 0.7


def test_alpha_threshold_continues_to_travel(layout32):
    # alpha below the threshold is a miss: the ray keeps going and hits the
    # opaque back face instead
    atlas = solid_atlas(layout32, (0.2, 0.9, 0.3))
    pix = atlas.pixels.copy()
    x0, y0 = layout32.rects["front"]
    pix[y0:y0 + 32, x0:x0 + 32, 3] = 0.4  # below default 0.5 threshold
    from boxtex.atlas import AtlasImage
    part = _cube_part(layout32, AtlasImage(pix, layout32.l))
    scene = build_scene([part])
    origins = np.array([[3.0, 0.0, 0.0]])
    dirs = np.array([[-1.0, 0.0, 0.0]])
    from boxtex import kernels
    tri, t, _, _ = kernels.first_opaque_hit(
        origins, dirs, scene.tris, scene.tri_uv, scene.part_start,
        scene.part_bounds, scene.alpha, 0.5)
    assert tri[0] >= 0
    # hit distance reaches the far side of the cube (x = -0.5), not the front
    assert t[0] == pytest.approx(3.5, abs=1e-9)


def test_render_deterministic(layout32):
    part = _cube_part(layout32, checker_alpha_atlas(layout32, (0.3, 0.5, 0.8), 4))
    a = render([part], _front_cam())
    b = render([part], _front_cam())
    assert np.array_equal(a, b)


def test_render_mesh_matches_textured_render(layout32):
    # a solid color acts like constant vertex colors on the same geometry
    color = (0.7, 0.4, 0.2)
    part = _cube_part(layout32, solid_atlas(layout32, color))
    tpl = part.box.template
    vc = np.tile(np.asarray(color, np.float32), (tpl.vertices.shape[0], 1))
    cam = _front_cam()
    a = render([part], cam)
    b = render_mesh(part.box.vertices, tpl.faces, vc, cam)
    assert np.allclose(a, b, atol=1e-5)


def test_custom_background(layout32):
    part = _cube_part(layout32, solid_atlas(layout32, (0.5, 0.5, 0.5), alpha=0.0))
    settings = RenderSettings(background=(0.0, 0.0, 0.0))
    img = render([part], _front_cam(), settings=settings)
    assert np.array_equal(img, np.zeros_like(img))


def test_ssim_properties(rng):
    a = rng.random((32, 32, 3)).astype(np.float64)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    b = np.clip(a + rng.normal(size=a.shape) * 0.2, 0, 1)
    s_ab = ssim(a, b)
    assert s_ab < 0.99
    assert ssim(b, a) == pytest.approx(s_ab, abs=1e-12)
    shifted = np.roll(a, 3, axis=1)
    assert ssim(a, shifted) < ssim(a, np.clip(a + 0.01, 0, 1))
    with pytest.raises(ValueError):
        ssim(a, b[:16])
    with pytest.raises(ValueError):
        ssim(a[:8, :8], a[:8, :8], window=11)


def test_ssim_luminance_shift_penalty():
    a = np.full((24, 24), 0.1)
    b = np.full((24, 24), 0.9)
    s = ssim(a, b)
    # constant images: structure term is 1, luminance term dominates
    expect = (2 * 0.1 * 0.9 + 1e-4) / (0.1 ** 2 + 0.9 ** 2 + 1e-4)
    assert s == pytest.approx(expect, abs=1e-9)
    assert s < 0.3


def test_multiview_ssim_self_identity(layout32):
    part = _cube_part(layout32, solid_atlas(layout32, (0.9, 0.6, 0.3)))
    score = multiview_ssim([part], [part])
    assert score == pytest.approx(1.0, abs=1e-12)


def test_seam_consistency_metric(layout32, rng):
    solid = solid_atlas(layout32, (0.4, 0.5, 0.6))
    assert seam_consistency(solid, layout32) == pytest.approx(0.0, abs=1e-9)
    from boxtex.atlas import AtlasImage
    noisy = AtlasImage(rng.random((96, 128, 4)).astype(np.float32), 32)
    assert seam_consistency(noisy, layout32) > 0.05


def test_compatibility_score(layout32):
    a = solid_atlas(layout32, (1.0, 0.0, 0.0))
    b = solid_atlas(layout32, (0.0, 1.0, 0.0))
    assert compatibility_score([a], layout32) == 0.0
    same = compatibility_score([a, a], layout32)
    assert same == pytest.approx(0.0, abs=1e-9)
    diff = compatibility_score([a, b], layout32)
    assert diff == pytest.approx(np.sqrt(2.0), rel=1e-6)
