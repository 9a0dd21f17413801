"""SE(3) poses, the pinhole camera, and depth-image reprojection between views."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InvalidDepth, NonPositiveDepth


# --------------------------------------------------------------------------- quaternions
# All quaternions are (w, x, y, z).

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q}")
    # dividing a unit quaternion by its norm can move the last bit; leaving it alone
    # keeps decode(encode(q)) bit-exact
    if abs(n - 1.0) > 4 * np.finfo(np.float64).eps:
        q = q / n
    # canonical hemisphere keeps serialized poses unique
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m):
    """Rotation matrix to unit quaternion (Shepperd's branch selection)."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_rotvec(rv):
    rv = np.asarray(rv, dtype=np.float64)
    angle = np.linalg.norm(rv)
    if angle < 1e-12:
        # second-order series keeps tiny rotations accurate
        return quat_normalize([1.0 - angle * angle / 8.0, *(0.5 * rv)])
    axis = rv / angle
    return quat_normalize([np.cos(angle / 2), *(np.sin(angle / 2) * axis)])


def quat_to_rotvec(q):
    q = quat_normalize(q)
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * np.arctan2(s, q[0])
    return v / s * angle


def rotation_angle(q):
    """Angle (radians, in [0, pi]) of the rotation represented by ``q``."""
    q = np.asarray(q, dtype=np.float64)
    return float(2.0 * np.arctan2(np.linalg.norm(q[1:]), abs(q[0])))


def rpy_to_matrix(rpy):
    """URDF fixed-axis roll/pitch/yaw: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    r, p, y = rpy
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


# --------------------------------------------------------------------------- SE(3)

@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Rigid transform ``x -> R x + t`` with R stored as a unit quaternion (w, x, y, z)."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        q = quat_normalize(np.array(self.rotation, dtype=np.float64).reshape(4))
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, 3], matrix_to_quat(m[:3, :3]))

    @classmethod
    def from_rotation_matrix(cls, rot, translation=(0.0, 0.0, 0.0)):
        return cls(translation, matrix_to_quat(rot))

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)):
        return cls(translation, quat_from_rotvec(rotvec))

    @classmethod
    def from_xyz_rpy(cls, xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)):
        return cls(xyz, matrix_to_quat(rpy_to_matrix(rpy)))

    @classmethod
    def from_list(cls, values):
        """From the 7-vector ``[tx, ty, tz, qw, qx, qy, qz]``."""
        values = list(values)
        if len(values) != 7:
            raise ValueError(f"pose needs 7 values, got {len(values)}")
        return cls(values[:3], values[3:])

    def to_list(self):
        return [float(v) for v in self.translation] + [float(v) for v in self.rotation]

    @property
    def rotation_matrix(self):
        return quat_to_matrix(self.rotation)

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return compose(self, other)

    __matmul__ = compose

    def inverse(self) -> "SE3Pose":
        return invert(self)

    def transform_point(self, p):
        return transform_point(self, p)

    def transform_points(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation_matrix.T + self.translation

    def rotvec(self):
        return quat_to_rotvec(self.rotation)

    def __repr__(self):
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        return f"SE3Pose(t=[{t}], q=[{q}])"


def compose(a: SE3Pose, b: SE3Pose) -> SE3Pose:
    t = a.translation + quat_to_matrix(a.rotation) @ b.translation
    return SE3Pose(t, quat_multiply(a.rotation, b.rotation))


def invert(p: SE3Pose) -> SE3Pose:
    q_inv = p.rotation * np.array([1.0, -1.0, -1.0, -1.0])
    return SE3Pose(-(quat_to_matrix(q_inv) @ p.translation), q_inv)


def transform_point(pose: SE3Pose, point):
    point = np.asarray(point, dtype=np.float64)
    return quat_to_matrix(pose.rotation) @ point + pose.translation


def pose_error(a: SE3Pose, b: SE3Pose):
    """(translation distance m, relative rotation angle rad) between two poses."""
    dt = float(np.linalg.norm(a.translation - b.translation))
    rel = quat_multiply(a.rotation * np.array([1.0, -1.0, -1.0, -1.0]), b.rotation)
    return dt, rotation_angle(rel)


def slerp(q0, q1, s):
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1, d = -q1, -d
    if d > 0.9995:
        return quat_normalize(q0 + s * (q1 - q0))
    theta = np.arccos(d)
    return quat_normalize((np.sin((1 - s) * theta) * q0 + np.sin(s * theta) * q1) / np.sin(theta))


def interpolate_pose(a: SE3Pose, b: SE3Pose, s: float) -> SE3Pose:
    return SE3Pose((1 - s) * a.translation + s * b.translation, slerp(a.rotation, b.rotation, s))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> SE3Pose:
    """World->camera extrinsic for a camera at ``eye`` looking at ``target``.

    Camera axes follow the vision convention: +z forward, +x right, +y down.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("up vector parallel to viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    cam_to_world = np.eye(4)
    cam_to_world[:3, 0], cam_to_world[:3, 1], cam_to_world[:3, 2] = right, down, fwd
    cam_to_world[:3, 3] = eye
    return SE3Pose.from_matrix(cam_to_world).inverse()


# --------------------------------------------------------------------------- cameras

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def as_matrix(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


@dataclass(frozen=True, eq=False)
class Camera:
    """Intrinsics plus the world->camera extrinsic."""

    intrinsics: CameraIntrinsics
    extrinsic: SE3Pose = field(default_factory=SE3Pose.identity)

    @property
    def cam_to_world(self) -> SE3Pose:
        return self.extrinsic.inverse()

    def to_dict(self):
        i = self.intrinsics
        return {
            "fx": float(i.fx), "fy": float(i.fy), "cx": float(i.cx), "cy": float(i.cy),
            "width": int(i.width), "height": int(i.height),
            "extrinsic": {"t": [float(v) for v in self.extrinsic.translation],
                          "q": [float(v) for v in self.extrinsic.rotation]},
        }

    @classmethod
    def from_dict(cls, d):
        intr = CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                                int(d["width"]), int(d["height"]))
        ext = d.get("extrinsic") or {"t": [0, 0, 0], "q": [1, 0, 0, 0]}
        return cls(intr, SE3Pose(ext["t"], ext["q"]))

    def same_calibration(self, other: "Camera", tol=1e-12) -> bool:
        if self.intrinsics != other.intrinsics:
            return False
        dt, dr = pose_error(self.extrinsic, other.extrinsic)
        return dt <= tol and dr <= tol


def project(intr: CameraIntrinsics, point_cam):
    """Camera-frame point(s) to pixel coordinates. Accepts (3,) or (N, 3)."""
    p = np.asarray(point_cam, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise NonPositiveDepth("point must lie in front of the camera (z > 0)")
    u = intr.fx * p[..., 0] / z + intr.cx
    v = intr.fy * p[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1)


def backproject(intr: CameraIntrinsics, pixel, depth):
    """Pixel(s) plus metric depth to camera-frame point(s)."""
    px = np.asarray(pixel, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise InvalidDepth("depth must be finite and positive")
    x = (px[..., 0] - intr.cx) * d / intr.fx
    y = (px[..., 1] - intr.cy) * d / intr.fy
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def depth_to_points(intr: CameraIntrinsics, depth, mask=None):
    """Backproject every valid (nonzero) depth pixel, optionally restricted to ``mask``.

    Returns (points (N, 3) camera frame, pixel indices (N, 2) as (v, u)).
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = depth > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    v, u = np.nonzero(valid)
    if v.size == 0:
        return np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64)
    pts = backproject(intr, np.stack([u, v], axis=-1).astype(np.float64), depth[v, u])
    return pts, np.stack([v, u], axis=-1)


def validate_depth(depth):
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError("depth image must be 2-D")
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise InvalidDepth("depth image must be finite and non-negative")
    return depth


def reproject_depth_image(rgb, depth, src: Camera, dst: Camera):
    """Forward-warp an RGB-D frame from ``src`` into ``dst`` with z-buffered splatting.

    Returns (rgb, depth, hole_mask) in the destination view; hole_mask marks pixels
    that received no source point. Identical calibrations return the valid input
    pixels unchanged.
    """
    rgb = np.asarray(rgb)
    depth = validate_depth(depth)
    if src.same_calibration(dst):
        # identical views: skip the round trip so valid pixels come back bit-exact
        valid = depth > 0
        out_rgb = np.zeros_like(rgb)
        out_rgb[valid] = rgb[valid]
        return out_rgb, np.where(valid, depth, 0.0), ~valid
    di = dst.intrinsics
    pts, vu = depth_to_points(src.intrinsics, depth)
    if pts.shape[0] == 0:
        return (np.zeros((di.height, di.width, 3), dtype=np.uint8),
                np.zeros((di.height, di.width)), np.ones((di.height, di.width), dtype=bool))
    rel = compose(dst.extrinsic, src.extrinsic.inverse())
    pts_dst = rel.transform_points(pts)
    colors = rgb[vu[:, 0], vu[:, 1]]
    out_rgb, out_depth, filled = _kernels.splat(pts_dst, colors, di.fx, di.fy, di.cx, di.cy,
                                                di.height, di.width)
    return out_rgb, out_depth, ~filled
