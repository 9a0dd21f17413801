"""Replace the source embodiments in a frame with a rendered target robot.

Per frame: segment the source robot (rendered from its joint config) and the human
arm (depth difference against an empty-scene plate), dilate the union, fill the
holes, solve IK for the target arm on each side, render both target arms, scale
their brightness and paste them over the filled frame.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import BackgroundMissing, IkFailed, NoConvergence, NoFillAvailable
from .geometry import Camera, SE3Pose, compose, depth_to_points, project, reproject_depth_image
from .images import load_mask
from .kinematics import IkParams, JointConfig, forward_kinematics, gripper_width_to_joints, solve_ik_detailed
from .render import (DEFAULT_LIGHT, RenderOutput, brightness_augment, brightness_factor, link_instance_id,
                     render_scene, robot_meshes)
from .robots import RobotConfig

MASK_SOURCES = ("renderer_gt", "depth_threshold", "external")
TARGET_NAMESPACE = {"left": 1, "right": 2}
MAX_DILATION = 50


# --------------------------------------------------------------------------- masks

@dataclass(frozen=True, eq=False)
class SegmentationMask:
    mask: np.ndarray
    source: str

    def __post_init__(self):
        if self.source not in MASK_SOURCES:
            raise ValueError(f"mask source must be one of {MASK_SOURCES}, got {self.source!r}")
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ValueError("mask must be 2-D")
        object.__setattr__(self, "mask", m)

    @property
    def pixels(self) -> int:
        return int(self.mask.sum())

    def dilated(self, px: int) -> "SegmentationMask":
        return SegmentationMask(dilate(self.mask, px), self.source)


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


def dilate(mask, px: int) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if px <= 0 or not m.any():
        return m.copy()
    return ndimage.binary_dilation(m, structure=disk(px))


def iou(a, b) -> float:
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    u = np.logical_or(a, b).sum()
    return 1.0 if u == 0 else float(np.logical_and(a, b).sum() / u)


def segment_robot(robot: RobotConfig, q: JointConfig, base: SE3Pose, camera: Camera,
                  dilation_px: int = 0) -> SegmentationMask:
    """Pixels of the source robot, from rendering its links at ``q``."""
    r = render_scene(robot_meshes(robot.chain, q, base), camera)
    return SegmentationMask(dilate(r.mask(), dilation_px), "renderer_gt")


def segment_depth(depth, plate_depth, camera: Optional[Camera] = None, tau_bg: float = 0.01,
                  workspace_box=None, exclude=None) -> SegmentationMask:
    """Pixels whose depth differs from the empty-scene plate by more than ``tau_bg``.

    ``workspace_box`` ([[xmin, ymin, zmin], [xmax, ymax, zmax]], world frame) keeps
    only pixels whose 3-D point falls inside; ``exclude`` removes pixels (e.g. the robot).
    """
    if plate_depth is None:
        raise BackgroundMissing("depth-threshold segmentation needs a background depth plate")
    d = np.asarray(depth, dtype=np.float64)
    p = np.asarray(plate_depth, dtype=np.float64)
    if d.shape != p.shape:
        raise ValueError(f"depth {d.shape} and plate {p.shape} differ in size")
    valid = d > 0
    m = valid & ((p <= 0) | (np.abs(d - p) > tau_bg))
    if workspace_box is not None and m.any():
        if camera is None:
            raise ValueError("workspace_box needs the camera calibration")
        lo, hi = (np.asarray(v, dtype=np.float64) for v in workspace_box)
        pts, vu = depth_to_points(camera.intrinsics, d, m)
        w = camera.cam_to_world.transform_points(pts)
        inside = np.all((w >= lo) & (w <= hi), axis=1)
        m = np.zeros_like(m)
        m[vu[inside, 0], vu[inside, 1]] = True
    if exclude is not None:
        m &= ~np.asarray(exclude, dtype=bool)
    return SegmentationMask(m, "depth_threshold")


def external_mask(path) -> SegmentationMask:
    return SegmentationMask(load_mask(path) > 0, "external")


def segment_embodiment(method: str, **kw) -> SegmentationMask:
    """Dispatch to a segmenter: ``renderer_gt`` (robot, FK render), ``depth_threshold``
    (human arm vs. plate) or ``external`` (mask PNG)."""
    if method == "renderer_gt":
        return segment_robot(kw["robot"], kw["q"], kw["base"], kw["camera"], kw.get("dilation_px", 0))
    if method == "depth_threshold":
        return segment_depth(kw["depth"], kw.get("plate_depth"), kw.get("camera"), kw.get("tau_bg", 0.01),
                             kw.get("workspace_box"), kw.get("exclude"))
    if method == "external":
        return external_mask(kw["path"])
    raise ValueError(f"unknown segmentation method {method!r}")


# --------------------------------------------------------------------------- inpainting

class Inpainter:
    """Fills hole pixels. ``fill`` returns (rgb, depth); depth 0 marks unknown."""

    name = "base"

    def fill(self, rgb, depth, holes, frame_index: int = 0):  # pragma: no cover
        raise NotImplementedError


class PlateInpainter(Inpainter):
    name = "background_plate"

    def __init__(self, plate_rgb, plate_depth=None):
        self.plate_rgb = np.asarray(plate_rgb, dtype=np.uint8)
        self.plate_depth = None if plate_depth is None else np.asarray(plate_depth, dtype=np.float64)

    def fill(self, rgb, depth, holes, frame_index=0):
        holes = np.asarray(holes, dtype=bool)
        if self.plate_rgb.shape != np.shape(rgb):
            raise ValueError("plate size differs from frame")
        out = np.array(rgb, copy=True)
        out[holes] = self.plate_rgb[holes]
        d = None
        if depth is not None:
            d = np.array(depth, dtype=np.float64, copy=True)
            d[holes] = 0.0 if self.plate_depth is None else self.plate_depth[holes]
        return out, d


class DiffuseInpainter(Inpainter):
    """Onion-peel averaging of known neighbours; used when no plate exists."""

    name = "diffuse_fill"

    def fill(self, rgb, depth, holes, frame_index=0):
        holes = np.asarray(holes, dtype=bool)
        if holes.any() and holes.all():
            raise NoFillAvailable("every pixel is a hole; nothing to diffuse from")
        filled, _ = _kernels.diffuse_fill(np.asarray(rgb, dtype=np.uint8), holes)
        d = None
        if depth is not None:
            d = np.array(depth, dtype=np.float64, copy=True)
            d[holes] = 0.0
        return filled, d


class ExternalInpainter(Inpainter):
    """Per-frame fills produced elsewhere: ``pattern.format(index=i)`` names an RGB PNG."""

    name = "external"

    def __init__(self, pattern: str):
        self.pattern = pattern

    def fill(self, rgb, depth, holes, frame_index=0):
        from .images import load_rgb

        path = Path(self.pattern.format(index=frame_index))
        if not path.is_file():
            raise NoFillAvailable(f"external fill {path} missing")
        fill = load_rgb(path)
        holes = np.asarray(holes, dtype=bool)
        out = np.array(rgb, copy=True)
        out[holes] = fill[holes]
        d = None
        if depth is not None:
            d = np.array(depth, dtype=np.float64, copy=True)
            d[holes] = 0.0
        return out, d


def make_inpainter(name: str, plate_rgb=None, plate_depth=None, pattern=None) -> Inpainter:
    """``background_plate`` falls back to ``diffuse_fill`` when no plate is stored."""
    if name == "background_plate":
        return PlateInpainter(plate_rgb, plate_depth) if plate_rgb is not None else DiffuseInpainter()
    if name == "diffuse_fill":
        return DiffuseInpainter()
    if name == "external":
        if pattern is None:
            raise NoFillAvailable("external inpainter needs a fill path pattern")
        return ExternalInpainter(pattern)
    raise ValueError(f"unknown inpainter {name!r}")


def inpaint(rgb, holes: SegmentationMask, plate_rgb=None, method: str = "background_plate"):
    """Fill ``holes`` in ``rgb`` (the plate when available, otherwise diffusion)."""
    m = holes.mask if isinstance(holes, SegmentationMask) else np.asarray(holes, dtype=bool)
    if not m.any():
        return np.array(rgb, copy=True)
    return make_inpainter(method, plate_rgb).fill(rgb, None, m)[0]


# --------------------------------------------------------------------------- config

@dataclass
class CrosspaintConfig:
    dilation_px: int = 3
    inpainter: str = "background_plate"
    brightness_range: Tuple[float, float] = (0.8, 1.2)
    ik: IkParams = field(default_factory=IkParams)
    z_test: bool = False
    tau_bg: float = 0.01
    workspace_box: Optional[list] = None
    drop_low_fidelity: bool = True
    camera: str = "fixed"
    light: Tuple[float, float, float] = DEFAULT_LIGHT
    external_fill: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.dilation_px) <= MAX_DILATION:
            raise ValueError(f"dilation_px must be in [0, {MAX_DILATION}]")
        lo, hi = self.brightness_range
        if not 0 < lo <= hi:
            raise ValueError("brightness_range needs 0 < lo <= hi")

    def to_dict(self):
        d = asdict(self)
        d.pop("ik")
        d["brightness_range"] = list(self.brightness_range)
        d["light"] = list(self.light)
        return d


# --------------------------------------------------------------------------- per frame

@dataclass
class ArmTarget:
    """Where the target arm on one side must put its grasp frame, and how wide to open."""

    side: str
    grasp_pose: SE3Pose
    width: float


@dataclass
class FrameResult:
    rgb: np.ndarray
    depth: np.ndarray
    source_mask: np.ndarray
    target_render: RenderOutput
    joints: Dict[str, JointConfig]
    fidelity: dict
    flagged: bool
    paste_mask: np.ndarray


def target_ee_pose(target: RobotConfig, grasp_pose: SE3Pose) -> SE3Pose:
    return compose(grasp_pose, target.grasp_offset.inverse())


def solve_target_ik(target: RobotConfig, arm: ArmTarget, seed: JointConfig, params: IkParams):
    """IK for one target arm (seed first, home as a fallback) with the gripper set from
    ``arm.width``. Returns (q, info); raises IkFailed carrying the best residuals."""
    chain = target.chain
    base = target.base(arm.side)
    goal = target_ee_pose(target, arm.grasp_pose)
    best = None
    seeds = [seed] if seed is target.home else [seed, target.home]
    for s in seeds:
        try:
            res = solve_ik_detailed(chain, goal, s, params, base=base)
            q = {**res.q, **gripper_width_to_joints(chain, arm.width, target.gripper)}
            return q, {"pos_error": res.pos_error, "rot_error": res.rot_error, "iterations": res.iterations,
                       "ok": True}
        except NoConvergence as exc:
            if best is None or exc.best_error < best.best_error:
                best = exc
    q = {**best.best_q, **gripper_width_to_joints(chain, arm.width, target.gripper)}
    raise IkFailed(f"target IK failed on the {arm.side} arm ({best})", side=arm.side,
                   pos_error=best.pos_error, rot_error=best.rot_error, best_q=q)


def render_targets(target: RobotConfig, joints: Dict[str, JointConfig], camera: Camera,
                   light=DEFAULT_LIGHT) -> RenderOutput:
    meshes = []
    for side in sorted(joints):
        meshes += robot_meshes(target.chain, joints[side], target.base(side), TARGET_NAMESPACE[side])
    return render_scene(meshes, camera, light)


def ee_mask_centroid(render: RenderOutput, target: RobotConfig, side: str, visible=None):
    """Pixel centroid (u, v) of the target EE link's rendered pixels, or None."""
    inst = link_instance_id(target.chain, target.ee_link, TARGET_NAMESPACE[side])
    m = render.instance_mask == inst
    if visible is not None:
        m &= visible
    if not m.any():
        return None
    v, u = np.nonzero(m)
    return float(u.mean()), float(v.mean())


def crosspaint_frame(rgb, depth, camera: Camera, source_mask, arms: Sequence[ArmTarget], target: RobotConfig,
                     cfg: CrosspaintConfig, inpainter: Inpainter, seeds: Optional[Dict[str, JointConfig]] = None,
                     frame_index: int = 0, brightness_seed=0) -> FrameResult:
    """Fill ``source_mask`` (already dilated) and paste the target arms posed at ``arms``.

    A side whose IK fails is rendered at its best attempt and the frame is flagged;
    callers drop or keep flagged frames per config.
    """
    src = source_mask.mask if isinstance(source_mask, SegmentationMask) else np.asarray(source_mask, dtype=bool)
    filled, fdepth = inpainter.fill(rgb, depth, src, frame_index) if src.any() else (
        np.array(rgb, copy=True), None if depth is None else np.array(depth, dtype=np.float64, copy=True))
    seeds = seeds or {}
    joints, ik_info, flagged, errors = {}, {}, False, []
    for arm in arms:
        seed = seeds.get(arm.side, target.home)
        try:
            q, info = solve_target_ik(target, arm, seed, cfg.ik)
        except IkFailed as exc:
            q = exc.best_q
            info = {"pos_error": exc.pos_error, "rot_error": exc.rot_error, "iterations": cfg.ik.max_iters,
                    "ok": False}
            flagged = True
            errors.append(str(exc))
        joints[arm.side] = q
        ik_info[arm.side] = info
    render = render_targets(target, joints, camera, cfg.light)
    render = brightness_augment(render, cfg.brightness_range, brightness_seed)
    paste = render.mask()
    if cfg.z_test and fdepth is not None:
        paste &= (fdepth <= 0) | (render.depth < fdepth)
    out = filled
    out[paste] = render.rgb[paste]
    out_depth = fdepth
    if out_depth is not None:
        out_depth[paste] = render.depth[paste]

    fid = {
        "ik": ik_info,
        "source_mask_px": int(src.sum()),
        "target_mask_px": int(paste.sum()),
        "coverage": float((src & paste).sum() / src.sum()) if src.any() else 1.0,
        "brightness": brightness_factor(cfg.brightness_range, brightness_seed),
        "ee": {},
    }
    for arm in arms:
        c = ee_mask_centroid(render, target, arm.side, paste)
        goal = target_ee_pose(target, arm.grasp_pose).translation
        pc = camera.extrinsic.transform_point(goal)
        proj = project(camera.intrinsics, pc).tolist() if pc[2] > 0 else None
        err = None if c is None or proj is None else float(np.hypot(c[0] - proj[0], c[1] - proj[1]))
        fid["ee"][arm.side] = {"centroid_px": None if c is None else list(c), "projected_px": proj,
                               "error_px": err}
    if errors:
        fid["errors"] = errors
    return FrameResult(out, out_depth, src, render, joints, fid, flagged, paste)


def frame_seed(seed: int, demo_id: str, index: int):
    """Deterministic per-frame seed for the brightness factor."""
    return [int(seed), zlib.crc32(demo_id.encode("utf-8")), int(index)]


def reproject_frame(rgb, depth, src: Camera, dst: Camera):
    """Move a frame to another calibration; returns (rgb, depth, holes). The frame is
    returned as-is when the calibrations match."""
    if src.same_calibration(dst):
        return np.array(rgb, copy=True), np.array(depth, dtype=np.float64, copy=True), np.zeros(depth.shape, bool)
    return reproject_depth_image(rgb, depth, src, dst)
