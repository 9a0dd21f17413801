"""Hand keypoints to parallel-jaw gripper actions.

Landmark order follows MANO: 0 wrist, 1-4 thumb (4 = tip), 5-8 index (5 = MCP,
8 = tip), 9-12 middle (9 = MCP), 13-16 ring, 17-20 pinky. Estimators with other
orderings are adapted with a remap table (``landmark_remap``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateHand, NoCorrespondences, RegistrationFailed, SourceUnavailable
from .geometry import SE3Pose, compose
from .registration import IcpParams, IcpResult, PointCloud, icp_register

WRIST, THUMB_TIP, INDEX_MCP, INDEX_TIP, MIDDLE_MCP = 0, 4, 5, 8, 9
NUM_LANDMARKS = 21
OPEN, CLOSED = "open", "closed"
ROBOT, HUMAN = "robot", "human_retargeted"


@dataclass(frozen=True, eq=False)
class HandKeypoints:
    landmarks: np.ndarray  # (21, 3) metres
    side: str = "right"

    def __post_init__(self):
        lm = np.array(self.landmarks, dtype=np.float64)
        if lm.shape != (NUM_LANDMARKS, 3):
            raise ValueError(f"expected {NUM_LANDMARKS}x3 landmarks, got {lm.shape}")
        if not np.all(np.isfinite(lm)):
            raise ValueError("landmarks must be finite")
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        lm.flags.writeable = False
        object.__setattr__(self, "landmarks", lm)

    def plausible(self) -> bool:
        d = np.linalg.norm(self.landmarks[MIDDLE_MCP] - self.landmarks[WRIST])
        return 0.02 < d < 0.20

    def transformed(self, pose: SE3Pose) -> "HandKeypoints":
        return HandKeypoints(pose.transform_points(self.landmarks), self.side)

    def to_dict(self):
        return {"landmarks": self.landmarks.tolist(), "side": self.side}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["landmarks"], dtype=np.float64), d.get("side", "right"))


def landmark_remap(landmarks, order: Sequence[int]) -> np.ndarray:
    """Reorder an estimator's landmarks: ``order[k]`` is the source row of MANO landmark k."""
    return np.asarray(landmarks, dtype=np.float64)[list(order)]


@dataclass(frozen=True, eq=False)
class EndEffectorAction:
    pose: SE3Pose
    gripper: str  # open | closed
    provenance: str  # robot | human_retargeted
    width: Optional[float] = None

    def __post_init__(self):
        if self.gripper not in (OPEN, CLOSED):
            raise ValueError(f"gripper must be open/closed, got {self.gripper!r}")
        if self.provenance not in (ROBOT, HUMAN):
            raise ValueError(f"bad provenance {self.provenance!r}")

    def to_dict(self):
        return {"pose": self.pose.to_list(), "gripper": self.gripper,
                "width": None if self.width is None else float(self.width),
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        return cls(SE3Pose.from_list(d["pose"]), d["gripper"], d["provenance"],
                   None if d.get("width") is None else float(d["width"]))

    def transformed(self, T: SE3Pose) -> "EndEffectorAction":
        return EndEffectorAction(compose(T, self.pose), self.gripper, self.provenance, self.width)


# --------------------------------------------------------------------------- per-frame ops

def _check(kp: HandKeypoints):
    if not kp.plausible():
        raise DegenerateHand("wrist to middle-MCP distance outside (2 cm, 20 cm)")


def wrist_frame(kp: HandKeypoints) -> SE3Pose:
    """Wrist pose: x toward the middle MCP, z = x × (index MCP - wrist) (negated for a
    left hand) so both sides give a right-handed frame; y = z × x."""
    _check(kp)
    lm = kp.landmarks
    a = lm[MIDDLE_MCP] - lm[WRIST]
    b = lm[INDEX_MCP] - lm[WRIST]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if nb < 1e-9:
        raise DegenerateHand("index MCP coincides with wrist")
    c = np.cross(a, b)
    if np.linalg.norm(c) <= np.sin(np.deg2rad(1.0)) * na * nb:
        raise DegenerateHand("wrist, index MCP and middle MCP are nearly collinear")
    x = a / na
    z = c / np.linalg.norm(c)
    if kp.side == "left":
        z = -z
    y = np.cross(z, x)
    return SE3Pose.from_rotation_matrix(np.column_stack([x, y, z]), lm[WRIST])


def gripper_angle(kp: HandKeypoints) -> float:
    """Angle at the index MCP between the thumb tip and the index tip, in [0, pi]."""
    _check(kp)
    lm = kp.landmarks
    u = lm[THUMB_TIP] - lm[INDEX_MCP]
    v = lm[INDEX_TIP] - lm[INDEX_MCP]
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-3 or nv < 1e-3:
        raise DegenerateHand("thumb or index tip within 1 mm of the index MCP")
    return float(np.arccos(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)))


def gripper_state(angle: float, threshold: float) -> str:
    return CLOSED if angle < threshold else OPEN


def retarget(kp: HandKeypoints, threshold: float = 0.35,
             grasp_offset: SE3Pose = SE3Pose.identity()) -> EndEffectorAction:
    return EndEffectorAction(compose(wrist_frame(kp), grasp_offset),
                             gripper_state(gripper_angle(kp), threshold), HUMAN)


def hysteresis_states(angles: Sequence[float], threshold: float = 0.35, band: float = 0.05,
                      min_hold: int = 3) -> List[str]:
    """Open/closed sequence with a hysteresis band and a minimum hold between switches.

    The first frame uses the plain threshold. Afterwards the state closes only below
    ``threshold - band``, opens only above ``threshold + band``, and never switches
    within ``min_hold`` frames of the previous switch. NaN angles hold the state.
    """
    out: List[str] = []
    last_switch = None
    state = None
    for i, a in enumerate(angles):
        if state is None:
            state = OPEN if not np.isfinite(a) else gripper_state(a, threshold)
        elif np.isfinite(a) and (last_switch is None or i - last_switch >= min_hold):
            want = state
            if state == OPEN and a < threshold - band:
                want = CLOSED
            elif state == CLOSED and a > threshold + band:
                want = OPEN
            if want != state:
                state, last_switch = want, i
        out.append(state)
    return out


# --------------------------------------------------------------------------- refinement

@dataclass
class RefineResult:
    keypoints: HandKeypoints
    transform: SE3Pose
    icp: IcpResult
    vertices_used: int


def refine_keypoints(raw: HandKeypoints, vertices, depth_cloud: PointCloud,
                     params: IcpParams = IcpParams(), visible=None) -> RefineResult:
    """Register the estimated hand mesh onto the segmented depth cloud and carry the
    keypoints along. ``visible`` optionally selects the mesh vertices facing the camera."""
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if visible is not None:
        verts = verts[np.asarray(visible, dtype=bool)]
    if len(depth_cloud) == 0 or len(verts) == 0:
        raise RegistrationFailed("empty hand point cloud or mesh")
    try:
        res = icp_register(PointCloud(verts), depth_cloud, SE3Pose.identity(), params)
    except NoCorrespondences as exc:
        raise RegistrationFailed(str(exc)) from exc
    return RefineResult(raw.transformed(res.transform), res.transform, res, len(verts))


def refine_keypoints_visible(raw: HandKeypoints, vertices, triangles, depth_cloud: PointCloud, intrinsics,
                             params: IcpParams = IcpParams(), rounds: int = 3, restart_rmse: float = 0.006,
                             restart_deg: float = 20.0) -> RefineResult:
    """Refinement against a single depth view using only camera-facing mesh vertices.

    A depth camera sees one side of the hand, so registering the whole mesh pulls
    it toward the camera. Visibility is recomputed from the current estimate after
    every round, starting from the raw pose. When the final truncated residual is
    above ``restart_rmse`` the registration is repeated from six starts rotated by
    ``restart_deg`` about each camera axis through the mesh centroid, and the start
    with the lowest residual wins.
    """
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(depth_cloud) == 0 or len(verts) == 0:
        raise RegistrationFailed("empty hand point cloud or mesh")

    def run(T):
        res, n = None, 0
        for _ in range(max(1, int(rounds))):
            vis = visible_vertices(T.transform_points(verts), triangles, intrinsics)
            n = int(vis.sum())
            if n < 3:
                raise RegistrationFailed("fewer than 3 hand mesh vertices visible")
            try:
                res = icp_register(PointCloud(verts[vis]), depth_cloud, T, params)
            except NoCorrespondences as exc:
                raise RegistrationFailed(str(exc)) from exc
            T = res.transform
        return res, n

    best = run(SE3Pose.identity())
    if best[0].rmse_history[-1] > restart_rmse and restart_deg > 0:
        c = verts.mean(axis=0)
        for rv in np.vstack([np.eye(3), -np.eye(3)]) * np.deg2rad(restart_deg):
            R = SE3Pose.from_rotvec(rv)
            # rotate about the mesh centroid: x -> R (x - c) + c
            start = SE3Pose(c - R.transform_point(c), R.rotation)
            try:
                cand = run(start)
            except RegistrationFailed:
                continue
            if cand[0].rmse_history[-1] < best[0].rmse_history[-1]:
                best = cand
    res, n = best
    return RefineResult(raw.transformed(res.transform), res.transform, res, n)


def visible_vertices(vertices, triangles, intrinsics, tol=0.005):
    """Vertices not hidden behind the mesh itself, by z-buffering the mesh in camera frame."""
    from . import _kernels

    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    i = intrinsics
    z = v[:, 2]
    vis = np.zeros(len(v), dtype=bool)
    front = z > 1e-3
    if not front.any():
        return vis
    colors = np.zeros((len(t), 3), dtype=np.uint8)
    _, depth, _ = _kernels.rasterize(v[t], colors, np.ones(len(t), np.int32),
                                     i.fx, i.fy, i.cx, i.cy, i.height, i.width)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.floor(i.fx * v[:, 0] / z + i.cx + 0.5)
        w = np.floor(i.fy * v[:, 1] / z + i.cy + 0.5)
    inb = front & (u >= 0) & (w >= 0) & (u < i.width) & (w < i.height)
    idx = np.flatnonzero(inb)
    d = depth[w[idx].astype(int), u[idx].astype(int)]
    vis[idx] = (d > 0) & (z[idx] <= d + tol)
    return vis


# --------------------------------------------------------------------------- pose sources

@dataclass
class HandObservation:
    keypoints: HandKeypoints
    vertices: Optional[np.ndarray] = None   # camera frame
    triangles: Optional[np.ndarray] = None


class HandPoseSource:
    """Per-frame provider of (keypoints, mesh) estimates in the camera frame.

    Implementations must be deterministic given the frame id and seed.
    """

    def estimate(self, demo_id: str, frame_index: int) -> HandObservation:  # pragma: no cover
        raise NotImplementedError


class FileHandSource(HandPoseSource):
    """Reads a keypoint JSON file: list of ``{landmarks, side[, vertices, triangles]}``."""

    def __init__(self, path_by_demo: Dict[str, Path]):
        self._paths = {k: Path(v) for k, v in path_by_demo.items()}
        self._cache: Dict[str, list] = {}

    def estimate(self, demo_id, frame_index):
        if demo_id not in self._cache:
            p = self._paths.get(demo_id)
            if p is None or not p.is_file():
                raise SourceUnavailable(f"no keypoint file for demo {demo_id!r}")
            self._cache[demo_id] = read_keypoint_file(p)
        frames = self._cache[demo_id]
        if not 0 <= frame_index < len(frames):
            raise SourceUnavailable(f"demo {demo_id!r} has no keypoints for frame {frame_index}")
        return frames[frame_index]


def read_keypoint_file(path) -> List[HandObservation]:
    with open(path) as f:
        raw = json.load(f)
    out = []
    for rec in raw:
        verts = rec.get("vertices")
        tris = rec.get("triangles")
        out.append(HandObservation(
            HandKeypoints.from_dict(rec),
            None if verts is None else np.array(verts, dtype=np.float64),
            None if tris is None else np.array(tris, dtype=np.int64)))
    return out


def write_keypoint_file(path, observations: Sequence[HandObservation]):
    recs = []
    for ob in observations:
        rec = ob.keypoints.to_dict()
        if ob.vertices is not None:
            rec["vertices"] = np.asarray(ob.vertices).tolist()
        if ob.triangles is not None:
            rec["triangles"] = np.asarray(ob.triangles).tolist()
        recs.append(rec)
    with open(path, "w") as f:
        json.dump(recs, f, separators=(",", ":"))


class SynthHandSource(HandPoseSource):
    """Ground-truth hands from a synthetic episode's sidecar, corrupted like a monocular
    estimator: a rigid bias drawn once per episode plus per-frame rigid jitter
    (``sigma_pos`` metres, ``sigma_rot`` radians). Keypoints and mesh move together."""

    def __init__(self, ground_truth: Dict[str, list], extrinsic: SE3Pose, sigma_pos=0.0, sigma_rot=0.0,
                 bias_translation=0.0, bias_rotation_deg=0.0, seed=0):
        self.ground_truth = ground_truth
        self.extrinsic = extrinsic
        self.sigma_pos = float(sigma_pos)
        self.sigma_rot = float(sigma_rot)
        self.bias_translation = float(bias_translation)
        self.bias_rotation_deg = float(bias_rotation_deg)
        self.seed = int(seed)

    def _rng(self, demo_id, frame):
        key = int.from_bytes(demo_id.encode("utf-8")[:16].ljust(16, b"\0"), "little")
        return np.random.default_rng([self.seed, key & 0xFFFFFFFF, key >> 32 & 0xFFFFFFFF, frame + 1])

    def estimate(self, demo_id, frame_index):
        from .synth import hand_geometry, random_rigid_offset

        records = self.ground_truth.get(demo_id)
        if records is None or not 0 <= frame_index < len(records):
            raise SourceUnavailable(f"no ground truth for {demo_id!r} frame {frame_index}")
        rec = records[frame_index]
        if rec.get("hand") is None:
            raise SourceUnavailable(f"no hand in {demo_id!r} frame {frame_index}")
        h = rec["hand"]
        wrist_cam = compose(self.extrinsic, SE3Pose.from_list(h["wrist_pose"]))
        kp_local, verts_local, tris = hand_geometry(h["opening"], h["side"])
        bias = random_rigid_offset(self._rng(demo_id, -1), self.bias_translation,
                                   np.deg2rad(self.bias_rotation_deg), exact_norm=True)
        jitter = random_rigid_offset(self._rng(demo_id, frame_index), self.sigma_pos, self.sigma_rot)
        # offsets act about the wrist so rotation does not swing the hand around the camera
        est = _about_wrist(wrist_cam, compose(bias, jitter))
        return HandObservation(HandKeypoints(est.transform_points(kp_local), h["side"]),
                               est.transform_points(verts_local), tris)


def _about_wrist(wrist: SE3Pose, offset: SE3Pose) -> SE3Pose:
    """Apply ``offset`` (translation in the camera frame, rotation about the wrist origin)."""
    return SE3Pose.from_rotation_matrix(offset.rotation_matrix @ wrist.rotation_matrix,
                                        wrist.translation + offset.translation)
