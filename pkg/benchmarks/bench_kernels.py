"""Time the numba and numpy kernel backends on a 640x480 frame and check they agree.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from bimanual_aug import _kernels
from bimanual_aug.synth import DEFAULT_CAMERA, camera_from_spec, hand_mesh, table_mesh
from bimanual_aug.geometry import SE3Pose
from bimanual_aug.render import render_scene

H, W = 480, 640
FX = FY = 525.0
CX, CY = 320.0, 240.0


def _triangles():
    cam = camera_from_spec(DEFAULT_CAMERA)
    meshes = [table_mesh(), hand_mesh(0.5)]
    rng = np.random.default_rng(0)
    tris = []
    for m in meshes:
        v = cam.extrinsic.transform_points(m.vertices)
        tris.append(v[m.triangles])
    tri = np.ascontiguousarray(np.concatenate(tris), dtype=np.float64)
    colors = rng.uniform(0, 255, size=(len(tri), 3))
    ids = np.arange(len(tri), dtype=np.int32) % 250 + 1
    return tri, colors, ids


def _points(n=300_000):
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(-0.6, 0.6, n), rng.uniform(-0.45, 0.45, n), rng.uniform(0.5, 2.0, n)])
    return pts, rng.uniform(0, 255, size=(n, 3))


def _holes():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 255, size=(H, W, 3))
    holes = np.zeros((H, W), dtype=bool)
    holes[150:330, 200:420] = True
    return img, holes


def _time(fn, repeat):
    fn()  # warm-up (numba compiles here)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    tri, colors, ids = _triangles()
    pts, pcol = _points()
    img, holes = _holes()
    cases = {
        "rasterize": lambda k: k.rasterize(tri, colors, ids, FX, FY, CX, CY, H, W),
        "splat": lambda k: k.splat(pts, pcol, FX, FY, CX, CY, H, W),
        "diffuse_fill": lambda k: k.diffuse_fill(img, holes),
    }
    backends = {"numpy": _kernels.numpy_backend}
    if _kernels.numba_backend is not None:
        backends["numba"] = _kernels.numba_backend
    print(f"{len(tri)} triangles, {len(pts)} points, {int(holes.sum())} hole pixels, {W}x{H}")
    for name, case in cases.items():
        results = {b: _time(lambda: case(k), args.repeat) for b, k in backends.items()}
        line = "  ".join(f"{b} {t * 1000:9.1f} ms" for b, (t, _) in results.items())
        if "numba" in results:
            speedup = results["numpy"][0] / results["numba"][0]
            agree = _same(results["numpy"][1], results["numba"][1])
            line += f"  speedup {speedup:6.1f}x  identical={agree}"
        print(f"{name:13s} {line}")
    cam = camera_from_spec(DEFAULT_CAMERA)
    scene = [(table_mesh(), SE3Pose.identity(), 1), (hand_mesh(0.5), SE3Pose.identity(), 2)]
    t, _ = _time(lambda: render_scene(scene, cam), args.repeat)
    print(f"render_scene (active backend {_kernels.BACKEND_NAME}) {t * 1000:.1f} ms")


if __name__ == "__main__":
    main()
