"""Synthetic episodes with exact ground truth.

A scene is a checkered table plane, one source robot arm and one human hand
proxy seen by a fixed camera. The robot follows scripted grasp-frame keyframes
(solved to joints by IK), the hand follows scripted grasp-frame keyframes with an
open/close schedule. Every frame is rendered to RGB-D; the emitted dataset has
the standard on-disk layout plus a ``ground_truth.jsonl`` sidecar per episode.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .dataset import (FORMAT_VERSION, SOURCE_FORMAT, Demonstration, RobotState, TrajectoryFrame,
                      canonical_json, other_side, sha256_text, write_demo, write_manifest)
from .errors import NoConvergence
from .geometry import (Camera, CameraIntrinsics, SE3Pose, compose, interpolate_pose, look_at,
                       quat_from_rotvec, rpy_to_matrix)
from .hand_retarget import (CLOSED, OPEN, ROBOT, EndEffectorAction, HandKeypoints, gripper_angle,
                            gripper_state, wrist_frame)
from .images import ensure_dir, save_depth, save_mask, save_rgb
from .kinematics import IkParams, forward_kinematics, gripper_width_to_joints, solve_ik_detailed
from .render import RenderOutput, TriangleMesh, link_instance_id, render_scene, robot_meshes
from .robots import RobotConfig, load_robot_config

TABLE_ID = 250
HAND_ID = 200
SOURCE_NAMESPACE = 0
SKIN = (225, 180, 150)
TABLE_COLORS = ((150, 115, 80), (120, 90, 60))

# hand proxy: thumb-index angle moves linearly with the scripted opening in [0, 1]
CLOSED_ANGLE = 0.12
OPEN_ANGLE = 0.9
INDEX_DIP = 0.35  # index finger bends this far toward the palm side (rad)

DEFAULT_CAMERA = {"fx": 525.0, "fy": 525.0, "cx": 320.0, "cy": 240.0, "width": 640, "height": 480,
                  "eye": [0.0, -0.75, 0.7], "target": [0.0, 0.35, 0.12], "up": [0.0, 0.0, 1.0]}
# hand grasp frame: ~9 cm along the fingers, approach axis (z) along the fingers
DEFAULT_HAND_GRASP_OFFSET = [0.09, 0.0, -0.01, float(np.cos(np.pi / 4)), 0.0, float(np.sin(np.pi / 4)), 0.0]
# source-robot IK is solved far below the recording precision
SCRIPT_IK = IkParams(max_iters=1000, pos_tol=1e-11, rot_tol=1e-10)


# --------------------------------------------------------------------------- hand geometry

def _grid_box(lo, hi, spacing=0.006):
    """Surface-sampled box: every face is a regular grid of small triangles."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = np.maximum(1, np.ceil((hi - lo) / spacing).astype(int))
    verts, tris = [], []
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        ua = np.linspace(lo[a], hi[a], n[a] + 1)
        ub = np.linspace(lo[b], hi[b], n[b] + 1)
        A, B = np.meshgrid(ua, ub, indexing="ij")
        for val in (lo[axis], hi[axis]):
            base = sum(len(v) for v in verts)
            p = np.zeros((A.size, 3))
            p[:, a], p[:, b], p[:, axis] = A.ravel(), B.ravel(), val
            verts.append(p)
            i, j = np.meshgrid(np.arange(n[a]), np.arange(n[b]), indexing="ij")
            v00 = base + i * (n[b] + 1) + j
            v10, v01, v11 = v00 + n[b] + 1, v00 + 1, v00 + n[b] + 2
            tris.append(np.stack([v00, v10, v11], -1).reshape(-1, 3))
            tris.append(np.stack([v00, v11, v01], -1).reshape(-1, 3))
    return np.concatenate(verts), np.concatenate(tris)


def _segment_box(p0, p1, width, thickness, side_axis, spacing=0.006):
    """Grid box spanning p0 -> p1 with the given cross-section; ``side_axis`` fixes its roll."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    ax = p1 - p0
    length = np.linalg.norm(ax)
    x = ax / length
    y = np.asarray(side_axis, float) - np.dot(side_axis, x) * x
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    v, t = _grid_box((0, -width / 2, -thickness / 2), (length, width / 2, thickness / 2), spacing)
    return p0 + v @ np.column_stack([x, y, z]).T, t


def _merge(parts):
    verts, tris, off = [], [], 0
    for v, t in parts:
        verts.append(v)
        tris.append(t + off)
        off += len(v)
    return np.concatenate(verts), np.concatenate(tris)


def opening_to_angle(opening: float) -> float:
    return CLOSED_ANGLE + float(np.clip(opening, 0.0, 1.0)) * (OPEN_ANGLE - CLOSED_ANGLE)


@lru_cache(maxsize=512)
def _hand_geometry(opening: float, side: str):
    theta = opening_to_angle(opening)
    d = np.array([np.cos(INDEX_DIP), 0.0, -np.sin(INDEX_DIP)])  # index finger direction
    y = np.array([0.0, 1.0, 0.0])
    kp = np.zeros((21, 3))
    idx_mcp = np.array([0.09, 0.025, 0.0])
    thumb_cmc = np.array([0.02, 0.03, -0.012])
    thumb_tip = idx_mcp + 0.07 * (np.cos(theta) * d + np.sin(theta) * y)
    kp[1] = thumb_cmc
    kp[2] = thumb_cmc + 0.4 * (thumb_tip - thumb_cmc)
    kp[3] = thumb_cmc + 0.7 * (thumb_tip - thumb_cmc)
    kp[4] = thumb_tip
    kp[5] = idx_mcp
    kp[6], kp[7], kp[8] = idx_mcp + 0.04 * d, idx_mcp + 0.062 * d, idx_mcp + 0.075 * d
    # middle, ring, pinky curled into a fist under the palm
    for base, mcp in ((9, (0.095, 0.0, 0.0)), (13, (0.09, -0.02, 0.0)), (17, (0.08, -0.038, 0.0))):
        m = np.array(mcp)
        kp[base] = m
        kp[base + 1] = m + (0.02, 0.0, -0.015)
        kp[base + 2] = m + (0.012, 0.0, -0.035)
        kp[base + 3] = m + (-0.008, 0.0, -0.035)
    parts = [
        _grid_box((0.0, -0.042, -0.013), (0.095, 0.038, 0.013)),              # palm
        _grid_box((0.075, -0.045, -0.045), (0.115, 0.012, -0.013)),           # curled fingers
        _segment_box(idx_mcp, kp[8], 0.018, 0.016, y),                         # index finger
        _segment_box(thumb_cmc, kp[2], 0.02, 0.018, np.cross(d, y)),            # thumb base
        _segment_box(kp[2], thumb_tip, 0.018, 0.016, np.cross(d, y)),           # thumb tip
    ]
    verts, tris = _merge(parts)
    if side == "left":
        flip = np.array([1.0, -1.0, 1.0])
        kp, verts, tris = kp * flip, verts * flip, tris[:, ::-1]
    for a in (kp, verts, tris):
        a.flags.writeable = False
    return kp, verts, tris


def hand_geometry(opening: float, side: str = "right"):
    """(21x3 landmarks, mesh vertices, triangles) of the hand proxy in its wrist frame.

    The wrist frame computed from the returned landmarks is the identity, and the
    thumb-index angle equals ``opening_to_angle(opening)`` exactly.
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be left/right, got {side!r}")
    return _hand_geometry(float(opening), side)


def hand_mesh(opening: float, side: str = "right") -> TriangleMesh:
    _, v, t = hand_geometry(opening, side)
    return TriangleMesh.uniform(v, t, SKIN)


# --------------------------------------------------------------------------- noise models

def random_rigid_offset(rng, sigma_t: float, sigma_r: float, exact_norm: bool = False) -> SE3Pose:
    """Random rigid motion. Gaussian per axis by default; with ``exact_norm`` the
    translation has length ``sigma_t`` and the rotation angle is ``sigma_r``."""
    if exact_norm:
        t = rng.normal(size=3)
        t *= sigma_t / max(np.linalg.norm(t), 1e-300)
        a = rng.normal(size=3)
        a *= sigma_r / max(np.linalg.norm(a), 1e-300)
    else:
        t = rng.normal(scale=sigma_t, size=3) if sigma_t > 0 else np.zeros(3)
        a = rng.normal(scale=sigma_r, size=3) if sigma_r > 0 else np.zeros(3)
    return SE3Pose(t, quat_from_rotvec(a))


def episode_bias(seed, translation: float = 0.04, rotation_deg: float = 5.0) -> SE3Pose:
    """Rigid keypoint bias drawn once per episode (fixed magnitude, random direction)."""
    rng = np.random.default_rng(seed)
    return random_rigid_offset(rng, translation, np.deg2rad(rotation_deg), exact_norm=True)


def perturb_keypoints(gt: HandKeypoints, sigma_pos: float, seed, bias: Optional[SE3Pose] = None) -> HandKeypoints:
    """Seeded i.i.d. Gaussian landmark noise plus an optional rigid bias applied about the wrist."""
    if sigma_pos < 0:
        raise ValueError("sigma_pos must be >= 0")
    lm = np.array(gt.landmarks)
    if bias is not None:
        w = lm[0].copy()
        lm = (lm - w) @ bias.rotation_matrix.T + w + bias.translation
    if sigma_pos > 0:
        lm = lm + np.random.default_rng(seed).normal(scale=sigma_pos, size=lm.shape)
    return HandKeypoints(lm, gt.side)


# --------------------------------------------------------------------------- scene

def table_mesh(x_range=(-1.5, 1.5), y_range=(-1.0, 2.0), tile=0.15, colors=TABLE_COLORS) -> TriangleMesh:
    xs = np.arange(x_range[0], x_range[1] + 1e-9, tile)
    ys = np.arange(y_range[0], y_range[1] + 1e-9, tile)
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    v00 = i * ny + j
    tris = np.concatenate([np.stack([v00, v00 + ny, v00 + ny + 1], -1).reshape(-1, 3),
                           np.stack([v00, v00 + ny + 1, v00 + 1], -1).reshape(-1, 3)])
    parity = ((i + j) % 2).ravel()
    cols = np.asarray(colors, dtype=np.uint8)[np.concatenate([parity, parity])]
    return TriangleMesh(verts, tris, cols)


def camera_from_spec(spec: Optional[dict] = None) -> Camera:
    s = dict(DEFAULT_CAMERA)
    s.update(spec or {})
    intr = CameraIntrinsics(float(s["fx"]), float(s["fy"]), float(s["cx"]), float(s["cy"]),
                            int(s["width"]), int(s["height"]))
    if "extrinsic" in s:
        e = s["extrinsic"]
        ext = SE3Pose.from_list(e) if isinstance(e, list) else SE3Pose.from_list(list(e["t"]) + list(e["q"]))
    else:
        ext = look_at(s["eye"], s["target"], s.get("up", (0.0, 0.0, 1.0)))
    return Camera(intr, ext)


# --------------------------------------------------------------------------- scripts

@dataclass
class SynthScript:
    seed: int = 0
    task: str = "pick_place"
    num_frames: int = 50
    num_episodes: int = 1
    fps: float = 10.0
    robot_side: str = "left"
    alternate_sides: bool = True
    camera: dict = field(default_factory=dict)
    source_robot: str = "panda"
    plate: dict = field(default_factory=dict)
    hand_grasp_offset: List[float] = field(default_factory=lambda: list(DEFAULT_HAND_GRASP_OFFSET))
    # optional explicit keyframes, [{"frame": k, "pose": [7]}] / [{"frame": k, "width"|"opening": v}];
    # they apply to every episode
    robot_path: Optional[list] = None
    robot_gripper: Optional[list] = None
    hand_path: Optional[list] = None
    hand_gripper: Optional[list] = None
    include_hand: bool = True
    include_robot: bool = True
    base_dir: Optional[Path] = None

    def __post_init__(self):
        if int(self.num_frames) < 1:
            raise ValueError("num_frames must be >= 1")
        if int(self.num_episodes) < 1:
            raise ValueError("num_episodes must be >= 1")
        if self.robot_side not in ("left", "right"):
            raise ValueError("robot_side must be left/right")
        if not self.fps > 0:
            raise ValueError("fps must be positive")

    @classmethod
    def from_dict(cls, d, base_dir=None):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__ and k != "base_dir"}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValueError(f"unknown script keys {unknown}")
        return cls(**known, base_dir=None if base_dir is None else Path(base_dir))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "base_dir"}

    def side_for(self, episode: int) -> str:
        if self.alternate_sides and episode % 2 == 1:
            return other_side(self.robot_side)
        return self.robot_side

    def robot(self) -> RobotConfig:
        ref = self.source_robot
        if self.base_dir is not None and not Path(ref).is_absolute() and (self.base_dir / ref).is_file():
            ref = str(self.base_dir / ref)
        return load_robot_config(ref)


def load_script(path) -> SynthScript:
    with open(path) as f:
        d = json.load(f)
    return SynthScript.from_dict(d, Path(path).parent)


def _down_pose(xyz, yaw, tilt=0.0) -> SE3Pose:
    """Grasp frame with its approach axis (z) pointing at the table."""
    R = rpy_to_matrix((0.0, 0.0, yaw)) @ rpy_to_matrix((np.pi + tilt, 0.0, 0.0))
    return SE3Pose.from_rotation_matrix(R, xyz)


def _interp_poses(keys, n) -> List[SE3Pose]:
    keys = sorted(((int(k["frame"]), SE3Pose.from_list(k["pose"])) for k in keys), key=lambda kv: kv[0])
    out = []
    for f in range(n):
        if f <= keys[0][0]:
            out.append(keys[0][1])
        elif f >= keys[-1][0]:
            out.append(keys[-1][1])
        else:
            for (f0, p0), (f1, p1) in zip(keys, keys[1:]):
                if f0 <= f <= f1:
                    out.append(interpolate_pose(p0, p1, (f - f0) / (f1 - f0)))
                    break
    return out


def _interp_scalar(keys, name, n) -> np.ndarray:
    keys = sorted(keys, key=lambda k: k["frame"])
    return np.interp(np.arange(n), [k["frame"] for k in keys], [float(k[name]) for k in keys])


def _schedule(rng, n, open_value, closed_value, name):
    """Open, close around 25-40 % of the episode, reopen around 60-80 %; 2-frame ramps."""
    if n < 12:
        return [{"frame": 0, name: open_value}]
    c = int(rng.integers(int(0.25 * n), int(0.4 * n) + 1))
    o = int(rng.integers(int(0.6 * n), int(0.8 * n) + 1))
    return [{"frame": 0, name: open_value}, {"frame": c, name: open_value},
            {"frame": c + 2, name: closed_value}, {"frame": o, name: closed_value},
            {"frame": o + 2, name: open_value}]


def _random_path(rng, n, side, tilt_range=0.0, z_range=(0.1, 0.3)):
    sign = -1.0 if side == "left" else 1.0
    frames = sorted(set(np.linspace(0, n - 1, 4).round().astype(int).tolist()))
    keys = []
    for f in frames:
        xyz = (sign * rng.uniform(0.12, 0.3), rng.uniform(0.2, 0.45), rng.uniform(*z_range))
        tilt = rng.uniform(-tilt_range, tilt_range) if tilt_range else 0.0
        keys.append({"frame": f, "pose": _down_pose(xyz, rng.uniform(-0.5, 0.5), tilt).to_list()})
    return keys


@dataclass
class EpisodePlan:
    """Per-frame scripted state of one episode (no rendering)."""

    demo_id: str
    robot_side: str
    hand_side: str
    robot: RobotConfig
    base: SE3Pose
    joints: List[Dict[str, float]]
    widths: List[float]
    grasp_poses: List[SE3Pose]           # FK of the solved joints
    scripted_grasp: List[SE3Pose]        # what the script asked for
    hand_grasp: List[Optional[SE3Pose]]
    hand_wrist: List[Optional[SE3Pose]]
    openings: List[Optional[float]]
    ik_residuals: List[Tuple[float, float]]


def plan_episode(script: SynthScript, episode: int = 0) -> EpisodePlan:
    n = int(script.num_frames)
    side = script.side_for(episode)
    hand_side = other_side(side)
    robot = script.robot()
    chain = robot.chain
    base = robot.base(side)
    rng = np.random.default_rng([int(script.seed), int(episode)])
    rpath = script.robot_path or _random_path(rng, n, side)
    rgrip = script.robot_gripper or _schedule(rng, n, robot.gripper.max_width, 0.0, "width")
    hpath = script.hand_path or _random_path(rng, n, hand_side, tilt_range=0.3, z_range=(0.12, 0.3))
    hgrip = script.hand_gripper or _schedule(rng, n, 1.0, 0.0, "opening")

    grasp_off = robot.grasp_offset
    targets = _interp_poses(rpath, n)
    widths = np.clip(_interp_scalar(rgrip, "width", n), 0.0, robot.gripper.max_width)
    q = dict(robot.home)
    joints, grasp_poses, residuals = [], [], []
    for k in range(n):
        ee_target = compose(targets[k], grasp_off.inverse())
        try:
            res = solve_ik_detailed(chain, ee_target, q, SCRIPT_IK, base=base)
            q = res.q
        except NoConvergence as exc:
            # an unreachable keyframe: the robot stops at its best attempt
            q = exc.best_q
        q = {**q, **gripper_width_to_joints(chain, widths[k], robot.gripper)}
        poses = forward_kinematics(chain, q, base)
        grasp = compose(poses[robot.ee_link], grasp_off)
        joints.append(dict(q))
        grasp_poses.append(grasp)
        dt = float(np.linalg.norm(grasp.translation - targets[k].translation))
        residuals.append((dt, 0.0))
    hand_off = SE3Pose.from_list(script.hand_grasp_offset)
    if script.include_hand:
        hand_grasp = _interp_poses(hpath, n)
        hand_wrist = [compose(g, hand_off.inverse()) for g in hand_grasp]
        openings = np.clip(_interp_scalar(hgrip, "opening", n), 0.0, 1.0).tolist()
    else:
        hand_grasp, hand_wrist, openings = [None] * n, [None] * n, [None] * n
    demo_id = f"demo_{episode:03d}"
    return EpisodePlan(demo_id, side, hand_side, robot, base, joints, widths.tolist(), grasp_poses,
                       targets, hand_grasp, hand_wrist, openings, residuals)


def scene_meshes(plan: EpisodePlan, k: int, include_robot=True, include_hand=True, include_table=True):
    meshes = []
    if include_table:
        meshes.append((table_mesh(), SE3Pose.identity(), TABLE_ID))
    if include_robot:
        meshes += robot_meshes(plan.robot.chain, plan.joints[k], plan.base, SOURCE_NAMESPACE)
    if include_hand and plan.hand_wrist[k] is not None:
        meshes.append((hand_mesh(plan.openings[k], plan.hand_side), plan.hand_wrist[k], HAND_ID))
    return meshes


def render_frame(plan: EpisodePlan, k: int, camera: Camera, include_robot=True) -> RenderOutput:
    return render_scene(scene_meshes(plan, k, include_robot), camera)


def render_plate(camera: Camera) -> RenderOutput:
    return render_scene([(table_mesh(), SE3Pose.identity(), TABLE_ID)], camera)


def instance_palette(robot: RobotConfig) -> Dict[str, str]:
    pal = {"0": "background", str(TABLE_ID): "table", str(HAND_ID): "hand"}
    for name in robot.chain.link_names:
        pal[str(link_instance_id(robot.chain, name, SOURCE_NAMESPACE))] = f"source:{name}"
    return pal


def hand_keypoints_world(plan: EpisodePlan, k: int) -> Optional[HandKeypoints]:
    if plan.hand_wrist[k] is None:
        return None
    kp, _, _ = hand_geometry(plan.openings[k], plan.hand_side)
    return HandKeypoints(plan.hand_wrist[k].transform_points(kp), plan.hand_side)


def _gripper_binary(width, max_width):
    return CLOSED if width < 0.5 * max_width else OPEN


@dataclass
class EpisodeResult:
    demo: Demonstration
    ground_truth: List[dict]
    plan: EpisodePlan
    renders: Optional[List[RenderOutput]] = None


def generate_episode(script: SynthScript, episode: int = 0, out_root=None, camera: Optional[Camera] = None,
                     keep_renders: bool = False) -> EpisodeResult:
    """Plan and render one episode. With ``out_root`` the demo directory (frames.jsonl,
    images, ground-truth sidecar) is written under it; renders are kept in memory
    only when ``keep_renders`` is set or nothing is written."""
    camera = camera or camera_from_spec(script.camera)
    plan = plan_episode(script, episode)
    robot = plan.robot
    maxw = robot.gripper.max_width
    hand_off = SE3Pose.from_list(script.hand_grasp_offset)
    demo_dir = None
    if out_root is not None:
        demo_dir = ensure_dir(Path(out_root) / plan.demo_id)
        ensure_dir(demo_dir / "cam_fixed")
    frames, gt, renders = [], [], []
    for k in range(int(script.num_frames)):
        r = render_frame(plan, k, camera, include_robot=script.include_robot)
        rgb_rel, depth_rel, mask_rel = (f"cam_fixed/rgb_{k:06d}.png", f"cam_fixed/depth_{k:06d}.png",
                                        f"cam_fixed/gt_instance_{k:06d}.png")
        if demo_dir is not None:
            save_rgb(demo_dir / rgb_rel, r.rgb)
            save_depth(demo_dir / depth_rel, r.depth)
            save_mask(demo_dir / mask_rel, r.instance_mask)
        if demo_dir is None or keep_renders:
            renders.append(r)
        width = plan.widths[k]
        grip = _gripper_binary(width, maxw)
        grasp = plan.grasp_poses[k]
        frames.append(TrajectoryFrame(
            index=k,
            timestamp=k / float(script.fps),
            observations={"fixed": {"rgb": rgb_rel, "depth": depth_rel}},
            robot_state=RobotState(grasp, width),
            robot_joints=plan.joints[k],
            robot_action=EndEffectorAction(grasp, grip, ROBOT, 0.0 if grip == CLOSED else maxw),
        ))
        rec = {
            "index": k,
            "robot": {"side": plan.robot_side, "joints": plan.joints[k], "grasp_pose": grasp.to_list(),
                      "ee_pose": compose(grasp, robot.grasp_offset.inverse()).to_list(),
                      "scripted_grasp_pose": plan.scripted_grasp[k].to_list(),
                      "width": width, "gripper": grip},
            "hand": None,
            "masks": {"instance": mask_rel},
        }
        kp = hand_keypoints_world(plan, k)
        if kp is not None:
            angle = gripper_angle(kp)
            rec["hand"] = {"side": plan.hand_side, "wrist_pose": plan.hand_wrist[k].to_list(),
                           "grasp_pose": compose(wrist_frame(kp), hand_off).to_list(),
                           "opening": plan.openings[k], "angle": angle,
                           "gripper": gripper_state(angle, 0.35), "keypoints": kp.landmarks.tolist()}
        gt.append(rec)
    demo = Demonstration(plan.demo_id, script.task, plan.robot_side, frames, True)
    if demo_dir is not None:
        write_demo(out_root, demo)
        with open(demo_dir / "ground_truth.jsonl", "w") as f:
            for rec in gt:
                f.write(canonical_json(rec) + "\n")
        with open(demo_dir / "cam_fixed" / "gt_instance_palette.json", "w") as f:
            f.write(canonical_json(instance_palette(robot)) + "\n")
    return EpisodeResult(demo, gt, plan, renders if renders else None)


def write_robot(root, robot: RobotConfig, key: str) -> dict:
    """Copy a robot's URDF (and config) under ``root/robots`` and return its manifest entry."""
    rdir = ensure_dir(Path(root) / "robots")
    dst = rdir / robot.urdf_path.name
    shutil.copyfile(robot.urdf_path, dst)
    return robot.to_dict(urdf_ref=f"robots/{robot.urdf_path.name}")


def write_synth_dataset(script: SynthScript, out_root) -> dict:
    """Generate every episode of ``script`` under ``out_root`` and write the manifest last."""
    out_root = ensure_dir(out_root)
    camera = camera_from_spec(script.camera)
    plate = render_plate(camera)
    pdir = ensure_dir(out_root / "cam_fixed")
    save_rgb(pdir / "plate_rgb.png", plate.rgb)
    save_depth(pdir / "plate_depth.png", plate.depth)
    demos = []
    for e in range(int(script.num_episodes)):
        res = generate_episode(script, e, out_root, camera)
        demos.append(res.demo)
    robot = script.robot()
    script_json = canonical_json(script.to_dict())
    manifest = {
        "format": SOURCE_FORMAT,
        "version": FORMAT_VERSION,
        "task": script.task,
        "cameras": {"fixed": camera.to_dict()},
        "robots": {"source": write_robot(out_root, robot, "source")},
        "plates": {"fixed": {"rgb": "cam_fixed/plate_rgb.png", "depth": "cam_fixed/plate_depth.png"}},
        "hand_grasp_offset": list(script.hand_grasp_offset),
        "demos": [d.index_entry() for d in demos],
        "run": {"tool": "bimanual_aug synth", "tool_version": __version__,
                "config_hash": sha256_text(script_json), "inputs": {"script": sha256_text(script_json)}},
        "ground_truth": "ground_truth.jsonl",
    }
    write_manifest(out_root, manifest)
    return manifest


def read_ground_truth(root, demo_id) -> List[dict]:
    path = Path(root) / demo_id / "ground_truth.jsonl"
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
