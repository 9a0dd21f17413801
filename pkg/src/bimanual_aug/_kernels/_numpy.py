import numpy as np


def rasterize(tri_cam, colors, ids, fx, fy, cx, cy, height, width, near=1e-3):
    tri_cam = np.asarray(tri_cam, dtype=np.float64).reshape(-1, 3, 3)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    ids = np.asarray(ids, dtype=np.int32).reshape(-1)
    fx, fy, cx, cy = float(fx), float(fy), float(cx), float(cy)
    depth = np.zeros((height, width), dtype=np.float64)
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    inst = np.zeros((height, width), dtype=np.int32)

    z = tri_cam[:, :, 2]
    keep = np.all(z > near, axis=1)
    for t in np.flatnonzero(keep):
        (x0, y0, z0), (x1, y1, z1), (x2, y2, z2) = tri_cam[t]
        u0, v0 = fx * x0 / z0 + cx, fy * y0 / z0 + cy
        u1, v1 = fx * x1 / z1 + cx, fy * y1 / z1 + cy
        u2, v2 = fx * x2 / z2 + cx, fy * y2 / z2 + cy
        area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
        if area == 0.0:
            continue
        umin = max(int(np.ceil(min(u0, u1, u2))), 0)
        umax = min(int(np.floor(max(u0, u1, u2))), width - 1)
        vmin = max(int(np.ceil(min(v0, v1, v2))), 0)
        vmax = min(int(np.floor(max(v0, v1, v2))), height - 1)
        if umin > umax or vmin > vmax:
            continue
        pv, pu = np.meshgrid(np.arange(vmin, vmax + 1, dtype=np.float64),
                             np.arange(umin, umax + 1, dtype=np.float64), indexing="ij")
        w0 = ((u1 - pu) * (v2 - pv) - (v1 - pv) * (u2 - pu)) / area
        w1 = ((u2 - pu) * (v0 - pv) - (v2 - pv) * (u0 - pu)) / area
        w2 = ((u0 - pu) * (v1 - pv) - (v0 - pv) * (u1 - pu)) / area
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue
        zz = 1.0 / (w0 * (1.0 / z0) + w1 * (1.0 / z1) + w2 * (1.0 / z2))
        win = depth[vmin:vmax + 1, umin:umax + 1]
        upd = inside & ((win == 0.0) | (zz < win))
        win[upd] = zz[upd]
        rgb[vmin:vmax + 1, umin:umax + 1][upd] = colors[t]
        inst[vmin:vmax + 1, umin:umax + 1][upd] = ids[t]
    return rgb, depth, inst


def splat(points, colors, fx, fy, cx, cy, height, width):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    depth = np.zeros((height, width), dtype=np.float64)
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    filled = np.zeros((height, width), dtype=bool)

    z = points[:, 2]
    ok = z > 0.0
    idx = np.flatnonzero(ok)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.floor(float(fx) * points[idx, 0] / z[idx] + float(cx) + 0.5)
        v = np.floor(float(fy) * points[idx, 1] / z[idx] + float(cy) + 0.5)
    inb = (u >= 0) & (v >= 0) & (u < width) & (v < height)
    idx, u, v = idx[inb], u[inb].astype(np.int64), v[inb].astype(np.int64)
    if idx.size == 0:
        return rgb, depth, filled
    lin = v * width + u
    order = np.lexsort((idx, z[idx], lin))
    lin_sorted = lin[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = lin_sorted[1:] != lin_sorted[:-1]
    win = order[first]
    sel = idx[win]
    depth.reshape(-1)[lin[win]] = z[sel]
    rgb.reshape(-1, 3)[lin[win]] = colors[sel]
    filled.reshape(-1)[lin[win]] = True
    return rgb, depth, filled


def diffuse_fill(img, holes, max_iters=10000):
    out = np.array(img, dtype=np.float64, copy=True)
    squeeze = out.ndim == 2
    if squeeze:
        out = out[:, :, None]
    known = ~np.asarray(holes, dtype=bool)
    h, w, nch = out.shape
    for _ in range(int(max_iters)):
        if known.all():
            break
        kf = known.astype(np.float64)
        masked = out * kf[:, :, None]
        cnt = np.zeros((h, w), dtype=np.int64)
        acc = np.zeros((h, w, nch), dtype=np.float64)
        # neighbour order (up, down, left, right) matches the numba kernel
        acc[1:] += masked[:-1]
        cnt[1:] += known[:-1]
        acc[:-1] += masked[1:]
        cnt[:-1] += known[1:]
        acc[:, 1:] += masked[:, :-1]
        cnt[:, 1:] += known[:, :-1]
        acc[:, :-1] += masked[:, 1:]
        cnt[:, :-1] += known[:, 1:]
        newly = (~known) & (cnt > 0)
        if not newly.any():
            break
        out[newly] = acc[newly] / cnt[newly][:, None]
        known = known | newly
    return (out[:, :, 0] if squeeze else out), known
