"""Times both kernel lanes on the two hot paths.

Run: python3 benchmarks/bench_kernels.py [--quick]

Reports closest-point throughput (brute and hierarchy) and opaque-hit ray
throughput, and verifies the lanes agree bit-for-bit on every workload before
trusting the numbers.
"""

import argparse
import importlib
import time

import numpy as np

from boxtex.kernels import _numpy as lane_numpy
from boxtex.kernels.bvh import build_bvh

try:
    from boxtex.kernels import _core as lane_cython
except ImportError:
    lane_cython = None


def timeit(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_closest(ntri, npt, rng, repeat):
    tris = rng.normal(size=(ntri, 3, 3))
    pts = rng.normal(size=(npt, 3)) * 2.0
    bvh = build_bvh(tris)

    ref = lane_numpy.closest_point_brute(tris, pts)
    rows = [("numpy brute", timeit(lambda: lane_numpy.closest_point_brute(tris, pts), repeat))]
    if lane_cython is not None:
        for name, fn in (
            ("cython brute", lambda: lane_cython.closest_point_brute(tris, pts)),
            ("cython bvh", lambda: lane_cython.closest_point_bvh(bvh, tris, pts)),
        ):
            out = fn()
            for a, b in zip(ref, out):
                assert np.array_equal(a, b), f"{name} diverges from numpy lane"
            rows.append((name, timeit(fn, repeat)))

    pairs = ntri * npt
    print(f"\nclosest point: {npt} points x {ntri} tris ({pairs / 1e6:.1f}M pairs)")
    base = rows[0][1]
    for name, t in rows:
        print(f"  {name:13s} {t * 1e3:9.1f} ms   {pairs / t / 1e6:8.1f} Mpairs/s   {base / t:5.1f}x")


def bench_raycast(nray, ntri, nparts, rng, repeat):
    # one deformed box per part, shifted apart; per-part solid alpha
    from boxtex.atlas import build_layout
    from boxtex.geom import DeformedBox, template_box
    from boxtex.render import TexturedPart, build_scene, camera_rays, default_viewpoints, shape_bbox
    from boxtex.synthetic import solid_atlas

    layout = build_layout(32, 4)
    tpl = template_box(4)
    parts = []
    for p in range(nparts):
        disp = rng.normal(size=tpl.vertices.shape) * 0.02
        disp[:, 0] += 1.1 * p
        parts.append(TexturedPart(box=DeformedBox(template=tpl, displacements=disp),
                                  atlas=solid_atlas(layout, (0.7, 0.3, 0.2)),
                                  layout=layout))
    scene = build_scene(parts)
    size = int(round(nray ** 0.5))
    cam = default_viewpoints(shape_bbox(parts), count=1, size=size)[0]
    origins, dirs = camera_rays(cam)

    args = (origins, dirs, scene.tris, scene.tri_uv, scene.part_start,
            scene.part_bounds, scene.alpha, 0.5)
    ref = lane_numpy.first_opaque_hit(*args)
    rows = [("numpy", timeit(lambda: lane_numpy.first_opaque_hit(*args), repeat))]
    if lane_cython is not None:
        out = lane_cython.first_opaque_hit(*args)
        for a, b in zip(ref, out):
            assert np.array_equal(a, b), "cython ray lane diverges from numpy lane"
        rows.append(("cython", timeit(lambda: lane_cython.first_opaque_hit(*args), repeat)))

    print(f"\nopaque-hit rays: {origins.shape[0]} rays x {ntri * nparts} tris ({nparts} parts)")
    base = rows[0][1]
    for name, t in rows:
        print(f"  {name:13s} {t * 1e3:9.1f} ms   {origins.shape[0] / t / 1e3:8.1f} krays/s   {base / t:5.1f}x")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="smaller workloads, 1 repeat")
    args = ap.parse_args()
    repeat = 1 if args.quick else 3
    rng = np.random.default_rng(0)

    if lane_cython is None:
        print("compiled lane not available; timing numpy lane only")

    if args.quick:
        bench_closest(400, 5_000, rng, repeat)
        bench_raycast(128 * 128, 192, 2, rng, repeat)
    else:
        bench_closest(400, 5_000, rng, repeat)
        bench_closest(2_000, 20_000, rng, repeat)
        bench_closest(12_288, 49_152, rng, repeat)   # paper-profile bake shape
        bench_raycast(256 * 256, 192, 6, rng, repeat)


if __name__ == "__main__":
    main()
