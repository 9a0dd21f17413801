import numpy as np
from numba import njit


@njit(cache=True)
def _rasterize(tri_cam, colors, ids, fx, fy, cx, cy, height, width, near):
    depth = np.zeros((height, width), dtype=np.float64)
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    inst = np.zeros((height, width), dtype=np.int32)
    n = tri_cam.shape[0]
    for t in range(n):
        z0 = tri_cam[t, 0, 2]
        z1 = tri_cam[t, 1, 2]
        z2 = tri_cam[t, 2, 2]
        if z0 <= near or z1 <= near or z2 <= near:
            continue
        u0 = fx * tri_cam[t, 0, 0] / z0 + cx
        v0 = fy * tri_cam[t, 0, 1] / z0 + cy
        u1 = fx * tri_cam[t, 1, 0] / z1 + cx
        v1 = fy * tri_cam[t, 1, 1] / z1 + cy
        u2 = fx * tri_cam[t, 2, 0] / z2 + cx
        v2 = fy * tri_cam[t, 2, 1] / z2 + cy
        area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
        if area == 0.0:
            continue
        umin = int(np.ceil(min(u0, min(u1, u2))))
        umax = int(np.floor(max(u0, max(u1, u2))))
        vmin = int(np.ceil(min(v0, min(v1, v2))))
        vmax = int(np.floor(max(v0, max(v1, v2))))
        if umin < 0:
            umin = 0
        if vmin < 0:
            vmin = 0
        if umax > width - 1:
            umax = width - 1
        if vmax > height - 1:
            vmax = height - 1
        iz0 = 1.0 / z0
        iz1 = 1.0 / z1
        iz2 = 1.0 / z2
        for v in range(vmin, vmax + 1):
            pv = float(v)
            for u in range(umin, umax + 1):
                pu = float(u)
                w0 = ((u1 - pu) * (v2 - pv) - (v1 - pv) * (u2 - pu)) / area
                w1 = ((u2 - pu) * (v0 - pv) - (v2 - pv) * (u0 - pu)) / area
                w2 = ((u0 - pu) * (v1 - pv) - (v0 - pv) * (u1 - pu)) / area
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                z = 1.0 / (w0 * iz0 + w1 * iz1 + w2 * iz2)
                d = depth[v, u]
                if d == 0.0 or z < d:
                    depth[v, u] = z
                    rgb[v, u, 0] = colors[t, 0]
                    rgb[v, u, 1] = colors[t, 1]
                    rgb[v, u, 2] = colors[t, 2]
                    inst[v, u] = ids[t]
    return rgb, depth, inst


def rasterize(tri_cam, colors, ids, fx, fy, cx, cy, height, width, near=1e-3):
    """Z-buffered flat-colour rasterization of camera-frame triangles.

    Pixel (u, v) samples the image point with integer coordinates (u, v).
    Triangles with any vertex at z <= near are skipped. Returns (rgb uint8,
    depth float64 with 0 for empty, instance id int32).
    """
    tri_cam = np.ascontiguousarray(tri_cam, dtype=np.float64).reshape(-1, 3, 3)
    colors = np.ascontiguousarray(colors, dtype=np.uint8).reshape(-1, 3)
    ids = np.ascontiguousarray(ids, dtype=np.int32).reshape(-1)
    return _rasterize(tri_cam, colors, ids, float(fx), float(fy), float(cx), float(cy),
                      int(height), int(width), float(near))


@njit(cache=True)
def _splat(points, colors, fx, fy, cx, cy, height, width):
    depth = np.zeros((height, width), dtype=np.float64)
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    filled = np.zeros((height, width), dtype=np.bool_)
    for i in range(points.shape[0]):
        z = points[i, 2]
        if not (z > 0.0):
            continue
        u = int(np.floor(fx * points[i, 0] / z + cx + 0.5))
        v = int(np.floor(fy * points[i, 1] / z + cy + 0.5))
        if u < 0 or v < 0 or u >= width or v >= height:
            continue
        if (not filled[v, u]) or z < depth[v, u]:
            filled[v, u] = True
            depth[v, u] = z
            rgb[v, u, 0] = colors[i, 0]
            rgb[v, u, 1] = colors[i, 1]
            rgb[v, u, 2] = colors[i, 2]
    return rgb, depth, filled


def splat(points, colors, fx, fy, cx, cy, height, width):
    """Forward-splat camera-frame points to their nearest pixel; nearest depth wins.

    Ties keep the earliest point. Returns (rgb uint8, depth float64, filled bool).
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.ascontiguousarray(colors, dtype=np.uint8).reshape(-1, 3)
    return _splat(points, colors, float(fx), float(fy), float(cx), float(cy), int(height), int(width))


@njit(cache=True)
def _diffuse_fill(img, known, max_iters):
    height, width, nch = img.shape
    out = img.copy()
    known = known.copy()
    acc = np.zeros(nch, dtype=np.float64)
    for _ in range(max_iters):
        newly = np.zeros((height, width), dtype=np.bool_)
        vals = np.zeros((height, width, nch), dtype=np.float64)
        any_new = False
        for v in range(height):
            for u in range(width):
                if known[v, u]:
                    continue
                cnt = 0
                for c in range(nch):
                    acc[c] = 0.0
                if v > 0 and known[v - 1, u]:
                    cnt += 1
                    for c in range(nch):
                        acc[c] += out[v - 1, u, c]
                if v < height - 1 and known[v + 1, u]:
                    cnt += 1
                    for c in range(nch):
                        acc[c] += out[v + 1, u, c]
                if u > 0 and known[v, u - 1]:
                    cnt += 1
                    for c in range(nch):
                        acc[c] += out[v, u - 1, c]
                if u < width - 1 and known[v, u + 1]:
                    cnt += 1
                    for c in range(nch):
                        acc[c] += out[v, u + 1, c]
                if cnt > 0:
                    newly[v, u] = True
                    any_new = True
                    for c in range(nch):
                        vals[v, u, c] = acc[c] / cnt
        if not any_new:
            break
        for v in range(height):
            for u in range(width):
                if newly[v, u]:
                    known[v, u] = True
                    for c in range(nch):
                        out[v, u, c] = vals[v, u, c]
    return out, known


def diffuse_fill(img, holes, max_iters=10000):
    """Fill ``holes`` by peeling inward: each pass sets every hole pixel bordering
    known pixels to the mean of its known 4-neighbours.

    ``img`` is (H, W, C) float64. Returns (filled image, known mask).
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    known = np.ascontiguousarray(~np.asarray(holes, dtype=bool))
    out, known = _diffuse_fill(img, known, int(max_iters))
    return (out[:, :, 0] if squeeze else out), known
