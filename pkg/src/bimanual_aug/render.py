"""Deterministic software rasterizer for robot link geometry.

Flat Lambertian shading (two-sided, ambient 0.3), z-buffer, no culling. Every
render owns its framebuffers, so renders may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .errors import MissingMesh
from .geometry import Camera, SE3Pose, compose
from .kinematics import JointConfig, KinematicChain, Visual, forward_kinematics
from .meshio import load_mesh

AMBIENT = 0.3
DEFAULT_LIGHT = tuple((np.array([0.3, -0.5, -0.8]) / np.linalg.norm([0.3, -0.5, -0.8])).tolist())
CIRCLE_SEGMENTS = 32
# instance ids: robot namespace k owns ids k*STRIDE+1 .. k*STRIDE+STRIDE-1
ROBOT_ID_STRIDE = 64


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray  # (M, 3) uint8 per face

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        c = np.asarray(self.colors, dtype=np.uint8)
        if c.ndim == 1:
            c = np.broadcast_to(c.reshape(1, 3), (len(t), 3))
        c = c.reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if len(c) != len(t):
            raise ValueError("need one colour per triangle")
        if len(t):
            a, b, d = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
            keep = np.linalg.norm(np.cross(b - a, d - a), axis=1) > 1e-15
            t, c = t[keep], c[keep]
        for arr in (v, t, c):
            arr.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "colors", np.ascontiguousarray(c))

    @classmethod
    def uniform(cls, vertices, triangles, rgb):
        tri = np.asarray(triangles).reshape(-1, 3)
        return cls(vertices, tri, np.tile(np.asarray(rgb, dtype=np.uint8), (len(tri), 1)))

    def with_color(self, rgb):
        return TriangleMesh(self.vertices, self.triangles,
                            np.tile(np.asarray(rgb, dtype=np.uint8), (len(self.triangles), 1)))

    def transformed(self, pose: SE3Pose):
        return TriangleMesh(pose.transform_points(self.vertices), self.triangles, self.colors)


@dataclass(frozen=True, eq=False)
class RenderOutput:
    rgb: np.ndarray           # (H, W, 3) uint8
    depth: np.ndarray         # (H, W) float64 metres, 0 = nothing rendered
    instance_mask: np.ndarray  # (H, W) int32, 0 = background

    def mask(self, ids: Optional[Iterable[int]] = None) -> np.ndarray:
        if ids is None:
            return self.instance_mask != 0
        return np.isin(self.instance_mask, np.fromiter(ids, dtype=np.int64))


# --------------------------------------------------------------------------- primitives

def box_mesh(size):
    sx, sy, sz = (0.5 * float(s) for s in size)
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    t = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],  # -x, +x
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],  # -y, +y
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],  # -z, +z
    ])
    return v, t


def cylinder_mesh(radius, length, segments=CIRCLE_SEGMENTS):
    a = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(a), radius * np.sin(a)], axis=1)
    h = 0.5 * float(length)
    v = np.concatenate([
        np.column_stack([ring, np.full(segments, -h)]),
        np.column_stack([ring, np.full(segments, h)]),
        [[0.0, 0.0, -h], [0.0, 0.0, h]],
    ])
    i = np.arange(segments)
    j = (i + 1) % segments
    bc, tc = 2 * segments, 2 * segments + 1
    side = np.concatenate([np.stack([i, j, j + segments], 1), np.stack([i, j + segments, i + segments], 1)])
    caps = np.concatenate([np.stack([np.full(segments, bc), j, i], 1),
                           np.stack([np.full(segments, tc), i + segments, j + segments], 1)])
    return v, np.concatenate([side, caps])


def sphere_mesh(radius, segments=CIRCLE_SEGMENTS):
    rings = segments // 2
    th = np.pi * np.arange(1, rings) / rings
    ph = 2 * np.pi * np.arange(segments) / segments
    st, ct = np.sin(th)[:, None], np.cos(th)[:, None]
    body = np.stack([st * np.cos(ph), st * np.sin(ph), np.broadcast_to(ct, (rings - 1, segments))], -1)
    v = np.concatenate([[[0, 0, 1.0]], body.reshape(-1, 3), [[0, 0, -1.0]]]) * radius
    tris = []
    top, bottom = 0, len(v) - 1
    idx = lambda r, s: 1 + r * segments + (s % segments)
    for s in range(segments):
        tris.append((top, idx(0, s), idx(0, s + 1)))
        tris.append((bottom, idx(rings - 2, s + 1), idx(rings - 2, s)))
    for r in range(rings - 2):
        for s in range(segments):
            tris.append((idx(r, s), idx(r + 1, s), idx(r + 1, s + 1)))
            tris.append((idx(r, s), idx(r + 1, s + 1), idx(r, s + 1)))
    return v, np.array(tris)


def _rgb255(rgba):
    return tuple(int(np.clip(np.floor(float(c) * 255.0 + 0.5), 0, 255)) for c in rgba[:3])


@lru_cache(maxsize=256)
def _primitive(kind, key):
    if kind == "box":
        return box_mesh(key)
    if kind == "cylinder":
        return cylinder_mesh(*key)
    if kind == "sphere":
        return sphere_mesh(key[0])
    raise ValueError(kind)


@lru_cache(maxsize=64)
def _file_mesh(path: str):
    return load_mesh(path)


def resolve_mesh_path(filename: str, base_dir: Optional[Path]) -> Path:
    name = filename
    for prefix in ("package://", "file://"):
        if name.startswith(prefix):
            name = name[len(prefix):]
    p = Path(name)
    candidates = [p] if p.is_absolute() else []
    if base_dir is not None and not p.is_absolute():
        candidates += [Path(base_dir) / p, Path(base_dir) / p.name]
    for c in candidates:
        if c.is_file():
            return c
    raise MissingMesh(f"mesh {filename!r} not found (searched {[str(c) for c in candidates]})")


def visual_mesh(visual: Visual, base_dir: Optional[Path] = None) -> TriangleMesh:
    """Tessellate (or load) a URDF visual in its own origin frame."""
    p = visual.params
    if visual.kind == "box":
        v, t = _primitive("box", tuple(p["size"]))
    elif visual.kind == "cylinder":
        v, t = _primitive("cylinder", (p["radius"], p["length"]))
    elif visual.kind == "sphere":
        v, t = _primitive("sphere", (p["radius"],))
    elif visual.kind == "mesh":
        v, t = _file_mesh(str(resolve_mesh_path(p["filename"], base_dir)))
        v = v * np.asarray(p.get("scale", [1, 1, 1]))
    else:
        raise ValueError(f"unknown visual kind {visual.kind!r}")
    return TriangleMesh.uniform(v, t, _rgb255(visual.rgba))


# --------------------------------------------------------------------------- rendering

def _shade(colors, normals, light):
    lam = np.abs(normals @ np.asarray(light, dtype=np.float64))
    k = AMBIENT + (1.0 - AMBIENT) * lam
    return np.clip(np.floor(colors.astype(np.float64) * k[:, None] + 0.5), 0, 255).astype(np.uint8)


def render_scene(meshes: Sequence[Tuple[TriangleMesh, SE3Pose, int]], camera: Camera,
                 light=DEFAULT_LIGHT) -> RenderOutput:
    """Rasterize posed meshes; each triangle carries its mesh's instance id."""
    intr = camera.intrinsics
    light = np.asarray(light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    tris, cols, ids = [], [], []
    for mesh, pose, inst in meshes:
        if len(mesh.triangles) == 0:
            continue
        world = pose.transform_points(mesh.vertices)
        tri_w = world[mesh.triangles]
        n = np.cross(tri_w[:, 1] - tri_w[:, 0], tri_w[:, 2] - tri_w[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        cols.append(_shade(mesh.colors, n, light))
        tris.append(camera.extrinsic.transform_points(tri_w.reshape(-1, 3)).reshape(-1, 3, 3))
        ids.append(np.full(len(mesh.triangles), int(inst), dtype=np.int32))
    if not tris:
        return RenderOutput(np.zeros((intr.height, intr.width, 3), np.uint8),
                            np.zeros((intr.height, intr.width)),
                            np.zeros((intr.height, intr.width), np.int32))
    rgb, depth, inst = _kernels.rasterize(np.concatenate(tris), np.concatenate(cols), np.concatenate(ids),
                                          intr.fx, intr.fy, intr.cx, intr.cy, intr.height, intr.width)
    return RenderOutput(rgb, depth, inst)


def link_instance_id(chain: KinematicChain, link: str, namespace: int = 0) -> int:
    return namespace * ROBOT_ID_STRIDE + chain.link_index(link) + 1


def robot_meshes(chain: KinematicChain, q: JointConfig, base: Optional[SE3Pose] = None,
                 namespace: int = 0, link_poses=None) -> List[Tuple[TriangleMesh, SE3Pose, int]]:
    if len(chain.link_names) >= ROBOT_ID_STRIDE:
        raise ValueError(f"robot has {len(chain.link_names)} links; at most {ROBOT_ID_STRIDE - 1} supported")
    poses = link_poses if link_poses is not None else forward_kinematics(chain, q, base)
    out = []
    for name in chain.link_names:
        inst = link_instance_id(chain, name, namespace)
        for vis in chain.links[name].visuals:
            out.append((visual_mesh(vis, chain.base_dir), compose(poses[name], vis.origin), inst))
    return out


def render_robot(chain: KinematicChain, q: JointConfig, base: Optional[SE3Pose], camera: Camera,
                 light=DEFAULT_LIGHT, namespace: int = 0) -> RenderOutput:
    """Render FK-posed link visuals; instance id = namespace*64 + link index + 1."""
    return render_scene(robot_meshes(chain, q, base, namespace), camera, light)


def brightness_factor(factor_range, seed) -> float:
    lo, hi = (float(v) for v in factor_range)
    if not (0.0 < lo <= hi):
        raise ValueError("brightness range needs 0 < lo <= hi")
    if lo == hi:
        return lo
    return float(np.random.default_rng(seed).uniform(lo, hi))


def scale_rgb(rgb, mask, factor):
    out = np.array(rgb, copy=True)
    vals = out[mask].astype(np.float64) * float(factor)
    out[mask] = np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8)
    return out


def brightness_augment(render: RenderOutput, factor_range=(0.8, 1.2), seed=0, mask=None) -> RenderOutput:
    """Scale rendered colours by one seeded factor inside the instance mask only."""
    f = brightness_factor(factor_range, seed)
    m = render.mask() if mask is None else np.asarray(mask, dtype=bool)
    return replace(render, rgb=scale_rgb(render.rgb, m, f))
