import subprocess
import sys

import numpy as np
import pytest

from boxtex.kernels import _numpy as lane_numpy
from boxtex.kernels.bvh import build_bvh

try:
    from boxtex.kernels import _core as lane_cython
except ImportError:
    lane_cython = None

needs_cython = pytest.mark.skipif(lane_cython is None,
                                  reason="compiled lane not built")


def _soup(rng, ntri=300, npt=1500):
    tris = rng.normal(size=(ntri, 3, 3))
    # exact duplicates force distance ties
    tris[50:60] = tris[40:50]
    tris[200] = tris[10]
    pts = rng.normal(size=(npt, 3)) * 2.0
    return tris, pts


def test_brute_tie_goes_to_lowest_index(rng):
    tri = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], dtype=np.float64)
    tris = np.concatenate([rng.normal(size=(3, 3, 3)) + 10.0, tri, tri, tri])
    _, _, idx, _ = lane_numpy.closest_point_brute(tris, np.array([[0.2, 0.2, 0.5]]))
    assert idx[0] == 3


def test_brute_interior_edge_vertex_regions():
    tri = np.array([[[0, 0, 0], [2, 0, 0], [0, 2, 0]]], dtype=np.float64)
    pts = np.array([
        [0.5, 0.5, 1.0],    # above interior
        [-1.0, -1.0, 0.0],  # vertex A region
        [3.0, -1.0, 0.0],   # vertex B region
        [-1.0, 3.0, 0.0],   # vertex C region
        [1.0, -1.0, 0.0],   # edge AB region
        [-1.0, 1.0, 0.0],   # edge AC region
        [2.0, 2.0, 0.0],    # edge BC region
    ])
    q, dist, _, bary = lane_numpy.closest_point_brute(tri, pts)
    expect_q = np.array([
        [0.5, 0.5, 0.0],
        [0.0, 0.0, 0.0],
        [2.0, 0.0, 0.0],
        [0.0, 2.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
    ])
    assert np.allclose(q, expect_q, atol=1e-12)
    assert np.allclose(dist, np.linalg.norm(pts - expect_q, axis=1), atol=1e-12)
    assert np.allclose(bary.sum(axis=1), 1.0, atol=1e-12)
    assert bary.min() >= -1e-12


def test_numpy_bvh_equals_brute(rng):
    tris, pts = _soup(rng)
    bvh = build_bvh(tris)
    a = lane_numpy.closest_point_brute(tris, pts)
    b = lane_numpy.closest_point_bvh(bvh, tris, pts)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_bvh_arrays_invariants(rng):
    tris, _ = _soup(rng)
    bvh = build_bvh(tris)
    # a permutation of all triangles, leaves own disjoint ranges
    assert np.array_equal(np.sort(bvh.tri_order), np.arange(tris.shape[0]))
    leaves = bvh.count > 0
    assert bvh.count[leaves].sum() == tris.shape[0]
    assert (bvh.left[leaves] == -1).all()
    # every node box contains its triangles
    for node in range(bvh.bmin.shape[0]):
        if bvh.count[node] > 0:
            own = bvh.tri_order[bvh.start[node]:bvh.start[node] + bvh.count[node]]
            t = tris[own]
            assert (t.min(axis=(0, 1)) >= bvh.bmin[node] - 1e-12).all()
            assert (t.max(axis=(0, 1)) <= bvh.bmax[node] + 1e-12).all()


def test_build_bvh_rejects_empty():
    with pytest.raises(ValueError):
        build_bvh(np.zeros((0, 3, 3)))


@needs_cython
def test_lane_parity_brute(rng):
    tris, pts = _soup(rng)
    a = lane_numpy.closest_point_brute(tris, pts)
    b = lane_cython.closest_point_brute(tris, pts)
    for x, y in zip(a, b):
        assert x.dtype == y.dtype
        assert np.array_equal(x, y)


@needs_cython
def test_lane_parity_bvh(rng):
    tris, pts = _soup(rng)
    bvh = build_bvh(tris)
    a = lane_numpy.closest_point_brute(tris, pts)
    b = lane_cython.closest_point_bvh(bvh, tris, pts)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


@needs_cython
def test_lane_parity_near_degenerate(rng):
    tris, pts = _soup(rng)
    tris[5, 1] = tris[5, 0] + (tris[5, 1] - tris[5, 0]) * 1e-8
    tris[6, 2] = tris[6, 0] + (tris[6, 2] - tris[6, 0]) * 1e-10
    a = lane_numpy.closest_point_brute(tris, pts)
    b = lane_cython.closest_point_brute(tris, pts)
    c = lane_cython.closest_point_bvh(build_bvh(tris), tris, pts)
    for x, y, z in zip(a, b, c):
        assert np.array_equal(x, y)
        assert np.array_equal(x, z)


def _ray_scene():
    from boxtex.atlas import build_layout
    from boxtex.geom import DeformedBox, template_box
    from boxtex.render import (TexturedPart, build_scene, camera_rays,
                               default_viewpoints, shape_bbox)
    from boxtex.synthetic import checker_alpha_atlas, solid_atlas

    rng = np.random.default_rng(7)
    layout = build_layout(32, 4)
    tpl = template_box(4)
    d1 = rng.normal(size=tpl.vertices.shape) * 0.02
    d2 = rng.normal(size=tpl.vertices.shape) * 0.02
    d2[:, 0] += 1.2
    parts = [
        TexturedPart(box=DeformedBox(template=tpl, displacements=d1),
                     atlas=checker_alpha_atlas(layout, (0.8, 0.2, 0.1), 4),
                     layout=layout),
        TexturedPart(box=DeformedBox(template=tpl, displacements=d2),
                     atlas=solid_atlas(layout, (0.1, 0.4, 0.9)),
                     layout=layout),
    ]
    scene = build_scene(parts)
    cams = default_viewpoints(shape_bbox(parts), count=3, size=96)
    rays = [camera_rays(c) for c in cams]
    return scene, rays


@needs_cython
def test_lane_parity_raycast():
    scene, rays = _ray_scene()
    for origins, dirs in rays:
        a = lane_numpy.first_opaque_hit(origins, dirs, scene.tris, scene.tri_uv,
                                        scene.part_start, scene.part_bounds,
                                        scene.alpha, 0.5)
        b = lane_cython.first_opaque_hit(origins, dirs, scene.tris, scene.tri_uv,
                                         scene.part_start, scene.part_bounds,
                                         scene.alpha, 0.5)
        for x, y in zip(a, b):
            assert x.dtype == y.dtype
            assert np.array_equal(x, y)


@needs_cython
def test_lane_parity_axis_aligned_rays():
    scene, _ = _ray_scene()
    origins = np.array([[0.0, 0.0, 3.0], [0.5, 0.0, 3.0], [-0.52, 0.0, 0.0],
                        [9.0, 9.0, 9.0]])
    dirs = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0],
                     [0.0, 0.0, -1.0]])
    a = lane_numpy.first_opaque_hit(origins, dirs, scene.tris, scene.tri_uv,
                                    scene.part_start, scene.part_bounds,
                                    scene.alpha, 0.5)
    b = lane_cython.first_opaque_hit(origins, dirs, scene.tris, scene.tri_uv,
                                     scene.part_start, scene.part_bounds,
                                     scene.alpha, 0.5)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    assert a[0][3] == -1  # the stray ray misses everything


def test_miss_reports_minus_one():
    scene, _ = _ray_scene()
    origins = np.array([[50.0, 0.0, 0.0]])
    dirs = np.array([[1.0, 0.0, 0.0]])
    tri, t, _, _ = lane_numpy.first_opaque_hit(
        origins, dirs, scene.tris, scene.tri_uv, scene.part_start,
        scene.part_bounds, scene.alpha, 0.5)
    assert tri[0] == -1
    assert np.isinf(t[0])


def test_backend_env_selection():
    code = ("import boxtex.kernels as k; print(k.BACKEND)")
    out = subprocess.run([sys.executable, "-c", code],
                         env={"BOXTEX_KERNELS": "numpy", "PATH": "/usr/bin:/bin"},
                         capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    auto = subprocess.run([sys.executable, "-c", code],
                          env={"BOXTEX_KERNELS": "auto", "PATH": "/usr/bin:/bin"},
                          capture_output=True, text=True)
    assert auto.stdout.strip() in ("cython", "numpy")
    if lane_cython is not None:
        assert auto.stdout.strip() == "cython"


def test_backend_env_rejects_unknown():
    code = "import boxtex.kernels"
    out = subprocess.run([sys.executable, "-c", code],
                         env={"BOXTEX_KERNELS": "fortran", "PATH": "/usr/bin:/bin"},
                         capture_output=True, text=True)
    assert out.returncode != 0
