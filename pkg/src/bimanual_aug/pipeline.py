"""Dataset-level stages: retarget human hands, then cross-paint and export.

Each stage reads a dataset root and writes a new one. Whole trajectories are the
unit of parallel work; workers share nothing but the filesystem and every output
byte depends only on the inputs and the config.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .config import PipelineConfig
from .crosspaint import (ArmTarget, CrosspaintConfig, crosspaint_frame, dilate, frame_seed, make_inpainter,
                         segment_depth, segment_robot)
from .dataset import (AUGMENTED_FORMAT, FORMAT_VERSION, SOURCE_FORMAT, BimanualDemo, Demonstration, HandState,
                      align_frames, canonical_json, export_augmented, load_dataset, load_manifest,
                      mix_bimanual, other_side, sha256_text, write_demo, write_json_atomic, write_manifest)
from .errors import BackgroundMissing, DegenerateHand, RegistrationFailed, SourceUnavailable
from .geometry import Camera, SE3Pose, compose, depth_to_points
from .hand_retarget import (CLOSED, HUMAN, OPEN, EndEffectorAction, FileHandSource, HandKeypoints,
                            SynthHandSource, gripper_angle, hysteresis_states, gripper_state,
                            landmark_remap, refine_keypoints, refine_keypoints_visible, wrist_frame)
from .images import ensure_dir, load_depth, load_rgb, save_depth, save_rgb
from .registration import PointCloud
from .robots import RobotConfig, load_robot_config

log = logging.getLogger("bimanual_aug")


# --------------------------------------------------------------------------- helpers

def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def input_hashes(root, demos) -> Dict[str, str]:
    root = Path(root)
    out = {"manifest.json": file_sha256(root / "manifest.json")}
    for d in demos:
        rel = f"{d.id}/frames.jsonl"
        out[rel] = file_sha256(root / rel)
    return out


def load_camera(manifest, name) -> Camera:
    try:
        return Camera.from_dict(manifest["cameras"][name])
    except KeyError:
        raise BackgroundMissing(f"manifest has no calibration for camera {name!r}") from None


def load_plate(root, manifest, name):
    plate = (manifest.get("plates") or {}).get(name)
    if not plate:
        return None, None
    for rel in plate.values():
        if rel and not (Path(root) / rel).is_file():
            raise BackgroundMissing(f"background plate {rel!r} for camera {name!r} is missing")
    rgb = load_rgb(Path(root) / plate["rgb"]) if plate.get("rgb") else None
    depth = load_depth(Path(root) / plate["depth"]) if plate.get("depth") else None
    return rgb, depth


def source_robot(root, manifest) -> Optional[RobotConfig]:
    d = (manifest.get("robots") or {}).get("source")
    return None if d is None else RobotConfig.from_dict(d, Path(root))


def copy_tree_files(src_root, dst_root, rels):
    for rel in rels:
        dst = Path(dst_root) / rel
        ensure_dir(dst.parent)
        shutil.copyfile(Path(src_root) / rel, dst)


def copy_static(src_root, dst_root, manifest):
    """Plates, robot URDFs and anything else the manifest references outside demo dirs."""
    rels = []
    for plate in (manifest.get("plates") or {}).values():
        rels += [v for v in plate.values() if v]
    for r in (manifest.get("robots") or {}).values():
        rels.append(r["urdf"])
    copy_tree_files(src_root, dst_root, sorted(set(rels)))


def _map_jobs(fn, tasks, jobs):
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def run_info(stage, cfg: PipelineConfig, inputs) -> dict:
    return {"tool": f"bimanual_aug {stage}", "tool_version": __version__, "config_hash": cfg.hash(),
            "config": {k: v for k, v in cfg.to_dict().items() if k != "paths"}, "inputs": inputs}


# --------------------------------------------------------------------------- retarget

def _hand_source(root, manifest, demos, cfg: PipelineConfig, camera: Camera):
    r = cfg.retarget
    if r.hand_source == "file":
        return FileHandSource({d.id: Path(root) / d.id / r.keypoint_file for d in demos})
    gt = {}
    for d in demos:
        p = Path(root) / d.id / manifest.get("ground_truth", "ground_truth.jsonl")
        if p.is_file():
            with open(p) as f:
                gt[d.id] = [json.loads(line) for line in f if line.strip()]
    return SynthHandSource(gt, camera.extrinsic, r.sigma_pos, r.sigma_rot, r.bias_translation,
                           r.bias_rotation_deg, cfg.seed)


def hand_cloud(depth, camera: Camera, plate_depth, robot_mask, cfg: PipelineConfig, center):
    """Segmented hand points (camera frame) near the raw hand estimate."""
    r = cfg.retarget
    m = segment_depth(depth, plate_depth, camera, r.tau_bg, r.workspace_box, exclude=robot_mask).mask
    pts, _ = depth_to_points(camera.intrinsics, depth, m)
    if len(pts):
        pts = pts[np.linalg.norm(pts - center, axis=1) <= r.crop_radius]
    return pts, int(m.sum())


def retarget_demo(task) -> dict:
    """Retarget one demonstration; writes its directory under the output root."""
    in_root, out_root, demo_id, cfg_dict = task
    cfg = PipelineConfig.from_dict(cfg_dict)
    in_root, out_root = Path(in_root), Path(out_root)
    manifest = load_manifest(in_root)
    demo = next(d for d in load_dataset(in_root) if d.id == demo_id)
    cpc = cfg.crosspaint_config()
    camera = load_camera(manifest, cpc.camera)
    _, plate_depth = load_plate(in_root, manifest, cpc.camera)
    robot = source_robot(in_root, manifest)
    r = cfg.retarget
    if r.refine and plate_depth is None:
        raise BackgroundMissing(f"{in_root}: refinement needs a depth plate for camera {cpc.camera!r}")
    src = _hand_source(in_root, manifest, [demo], cfg, camera)
    grasp_off = SE3Pose.from_list(r.grasp_offset if r.grasp_offset is not None
                                  else manifest.get("hand_grasp_offset", [0, 0, 0, 1, 0, 0, 0]))
    cam_to_world = camera.cam_to_world

    kps, angles, report, reasons = [], [], [], []
    for fr in demo.frames:
        rec = {"index": fr.index}
        reason = None
        kp = None
        try:
            ob = src.estimate(demo.id, fr.index)
            kp = ob.keypoints
            if r.landmark_order is not None:
                kp = HandKeypoints(landmark_remap(kp.landmarks, r.landmark_order), kp.side)
            if r.refine:
                obs = fr.observations.get(cpc.camera, {})
                if not obs.get("depth") or not (in_root / demo.id / obs["depth"]).is_file():
                    raise BackgroundMissing(f"{demo.id} frame {fr.index}: no depth image for camera {cpc.camera!r}")
                depth = load_depth(in_root / demo.id / obs["depth"])
                robot_mask = None
                if robot is not None and fr.robot_joints is not None:
                    robot_mask = segment_robot(robot, fr.robot_joints, robot.base(demo.robot_side), camera,
                                               r.robot_dilation_px).mask
                pts, seg_px = hand_cloud(depth, camera, plate_depth, robot_mask, cfg, kp.landmarks.mean(axis=0))
                rec["segmented_px"] = seg_px
                rec["cloud_points"] = int(len(pts))
                if len(pts) < r.min_cloud_points:
                    raise RegistrationFailed(f"only {len(pts)} hand depth points")
                if ob.vertices is not None and ob.triangles is not None:
                    res = refine_keypoints_visible(kp, ob.vertices, ob.triangles, PointCloud(pts),
                                                   camera.intrinsics, cfg.icp, r.visibility_rounds)
                elif ob.vertices is not None:
                    res = refine_keypoints(kp, ob.vertices, PointCloud(pts), cfg.icp)
                else:
                    raise RegistrationFailed("hand estimate has no mesh vertices")
                kp = res.keypoints
                rec.update(icp_rmse=res.icp.rmse, icp_iterations=res.icp.iterations,
                           inlier_fraction=res.icp.inlier_fraction,
                           correction_m=float(np.linalg.norm(res.keypoints.landmarks[0] - ob.keypoints.landmarks[0])))
        except RegistrationFailed as exc:
            reason = f"registration failed: {exc}"
        except SourceUnavailable as exc:
            reason = f"no hand estimate: {exc}"
        angle = float("nan")
        if kp is not None:
            try:
                wrist_frame(kp)
                angle = gripper_angle(kp)
            except DegenerateHand as exc:
                reason = f"degenerate hand: {exc}"
                angle = float("nan")
        rec["angle"] = angle
        kps.append(kp)
        angles.append(angle)
        reasons.append(reason)
        report.append(rec)

    if r.hysteresis:
        states = hysteresis_states(angles, r.threshold, r.band, r.min_hold)
    else:
        states = [gripper_state(a, r.threshold) if np.isfinite(a) else OPEN for a in angles]
    frames = []
    low_count = 0
    for fr, kp, state, reason, rec in zip(demo.frames, kps, states, reasons, report):
        low = reason is not None
        human_action = None
        hand_state = None
        if kp is not None and np.isfinite(rec["angle"]):
            pose = compose(cam_to_world, compose(wrist_frame(kp), grasp_off))
            human_action = EndEffectorAction(pose, state, HUMAN)
            hand_state = HandState(kp, low)
        elif kp is not None:
            hand_state = HandState(kp, True)
        rec["low_fidelity"] = low
        rec["gripper"] = state
        if reason:
            rec["reason"] = reason
        low_count += low
        frames.append(replace(fr, hand_state=hand_state, human_action=human_action, low_fidelity=low,
                              notes=list(fr.notes) + ([reason] if reason else [])))
    out_demo = replace(demo, frames=frames)
    write_demo(out_root, out_demo)
    rels = []
    for fr in demo.frames:
        for cam in fr.observations.values():
            rels += [f"{demo.id}/{v}" for v in cam.values() if v]
    for extra in (manifest.get("ground_truth", "ground_truth.jsonl"), r.keypoint_file):
        if (in_root / demo.id / extra).is_file():
            rels.append(f"{demo.id}/{extra}")
    for p in sorted((in_root / demo.id).glob("cam_*/gt_instance_*")):
        rels.append(str(p.relative_to(in_root)))
    copy_tree_files(in_root, out_root, sorted(set(rels)))
    fid = {"demo": demo.id, "stage": "retarget", "low_fidelity_frames": low_count, "frames": report}
    with open(out_root / demo.id / "retarget_fidelity.json", "w") as f:
        f.write(canonical_json(fid) + "\n")
    return {"id": demo.id, "low_fidelity": low_count, "frames": len(frames),
            "correction_m": [x.get("correction_m") for x in report]}


def run_retarget(in_root, out_root, cfg: PipelineConfig, jobs=None) -> dict:
    in_root, out_root = Path(in_root), Path(out_root)
    manifest = load_manifest(in_root)
    demos = load_dataset(in_root)
    cpc = cfg.crosspaint_config()
    load_camera(manifest, cpc.camera)
    if cfg.retarget.refine and load_plate(in_root, manifest, cpc.camera)[1] is None:
        raise BackgroundMissing(f"{in_root}: no depth plate for camera {cpc.camera!r}; "
                                "refinement cannot segment the hand")
    ensure_dir(out_root)
    copy_static(in_root, out_root, manifest)
    cfg_dict = cfg.to_dict()
    results = _map_jobs(retarget_demo, [(str(in_root), str(out_root), d.id, cfg_dict) for d in demos], jobs)
    m = dict(manifest)
    m["run"] = run_info("retarget", cfg, input_hashes(in_root, demos))
    m["lineage"] = {"parent_run": manifest.get("run"), "stage": "retarget"}
    m["retarget"] = {"low_fidelity_frames": {r["id"]: r["low_fidelity"] for r in results}}
    write_manifest(out_root, m)
    log.info("retarget_done", extra={"fields": {"demos": len(results),
                                                "low_fidelity": int(sum(r["low_fidelity"] for r in results))}})
    return {"demos": results}


# --------------------------------------------------------------------------- crosspaint

def _arm_targets(fr, demo: Demonstration, target: RobotConfig):
    robot_side = demo.robot_side
    arms = [ArmTarget(robot_side, fr.robot_state.pose,
                      fr.robot_state.gripper_width if fr.robot_state.gripper_width is not None
                      else (target.gripper.max_width if fr.robot_action is None or fr.robot_action.gripper == OPEN
                            else 0.0))]
    if fr.human_action is not None:
        width = target.gripper.max_width if fr.human_action.gripper == OPEN else 0.0
        arms.append(ArmTarget(other_side(robot_side), fr.human_action.pose, width))
    return arms


def crosspaint_demo(task) -> dict:
    in_root, out_root, demo_id, cfg_dict, target_path = task
    cfg = PipelineConfig.from_dict(cfg_dict)
    cpc = cfg.crosspaint_config()
    in_root, out_root = Path(in_root), Path(out_root)
    manifest = load_manifest(in_root)
    demo = next(d for d in load_dataset(in_root) if d.id == demo_id)
    demo = align_frames(demo, SE3Pose.from_list(cfg.align))
    camera = load_camera(manifest, cpc.camera)
    plate_rgb, plate_depth = load_plate(in_root, manifest, cpc.camera)
    robot = source_robot(in_root, manifest)
    target = load_robot_config(target_path)
    inpainter = make_inpainter(cpc.inpainter, plate_rgb, plate_depth,
                               None if cpc.external_fill is None else str(in_root / demo.id / cpc.external_fill))
    ddir = ensure_dir(out_root / demo.id)
    seeds: Dict[str, dict] = {}
    observations, fidelity, flagged, report = {}, {}, [], []
    for fr in demo.frames:
        obs = fr.observations[cpc.camera]
        rgb = load_rgb(in_root / demo.id / obs["rgb"])
        depth = load_depth(in_root / demo.id / obs["depth"]) if obs.get("depth") else None
        robot_mask = np.zeros(rgb.shape[:2], dtype=bool)
        if robot is not None and fr.robot_joints is not None:
            robot_mask = segment_robot(robot, fr.robot_joints, robot.base(demo.robot_side), camera).mask
        human_mask = np.zeros_like(robot_mask)
        if depth is not None and plate_depth is not None:
            human_mask = segment_depth(depth, plate_depth, camera, cpc.tau_bg, cpc.workspace_box,
                                       exclude=robot_mask).mask
        elif fr.hand_state is not None:
            raise BackgroundMissing(f"{demo.id}: human segmentation needs depth and a depth plate")
        source = dilate(robot_mask | human_mask, cpc.dilation_px)
        arms = _arm_targets(fr, demo, target)
        res = crosspaint_frame(rgb, depth, camera, source, arms, target, cpc, inpainter, seeds, fr.index,
                               frame_seed(cpc.seed, demo.id, fr.index))
        low = res.flagged or fr.human_action is None
        for arm in arms:
            if res.fidelity["ik"][arm.side]["ok"]:
                seeds[arm.side] = res.joints[arm.side]
        fid = dict(res.fidelity)
        fid["robot_mask_px"] = int(robot_mask.sum())
        fid["human_mask_px"] = int(human_mask.sum())
        fid["target_gripper"] = {side: [q[j] for j in target.gripper.joints] for side, q in res.joints.items()}
        fid["target_joints"] = {side: {j: float(v) for j, v in sorted(q.items())} for side, q in res.joints.items()}
        if fr.hand_state is not None:
            fid["hand_low_fidelity"] = bool(fr.hand_state.low_fidelity)
        fidelity[fr.index] = fid
        report.append({"index": fr.index, "flagged": bool(low), **fid})
        if low:
            flagged.append(fr.index)
        if low and cpc.drop_low_fidelity:
            continue
        new_obs = {}
        for cam, paths in fr.observations.items():
            if cam == cpc.camera:
                rel_rgb, rel_depth = f"cam_{cam}/rgb_{fr.index:06d}.png", f"cam_{cam}/depth_{fr.index:06d}.png"
                ensure_dir(ddir / f"cam_{cam}")
                save_rgb(ddir / rel_rgb, res.rgb)
                entry = {"rgb": rel_rgb}
                if res.depth is not None:
                    save_depth(ddir / rel_depth, res.depth)
                    entry["depth"] = rel_depth
                new_obs[cam] = entry
            else:
                # other (e.g. wrist) cameras pass through unmodified
                copy_tree_files(in_root / demo.id, ddir, [v for v in paths.values() if v])
                new_obs[cam] = dict(paths)
        observations[fr.index] = new_obs
    frames, dropped = mix_bimanual(demo, cpc.drop_low_fidelity, observations, fidelity, flagged)
    bd = BimanualDemo(demo.id, demo.task, frames, source_demo_id=demo.id, robot_side=demo.robot_side,
                      success=demo.success, dropped_frames=dropped)
    with open(ddir / "fidelity.json", "w") as f:
        f.write(canonical_json({"demo": demo.id, "stage": "crosspaint", "flagged": flagged,
                                "dropped": dropped, "frames": report}) + "\n")
    return {"demo": bd, "flagged": flagged}


def run_crosspaint(in_root, target_path, out_root, cfg: PipelineConfig, jobs=None) -> dict:
    in_root, out_root = Path(in_root), Path(out_root)
    manifest = load_manifest(in_root)
    demos = load_dataset(in_root)
    cpc = cfg.crosspaint_config()
    camera = load_camera(manifest, cpc.camera)
    target = load_robot_config(target_path)
    for side in ("left", "right"):
        target.base(side)
    ensure_dir(out_root)
    ensure_dir(out_root / "robots")
    shutil.copyfile(target.urdf_path, out_root / "robots" / target.urdf_path.name)
    cfg_dict = cfg.to_dict()
    results = _map_jobs(crosspaint_demo, [(str(in_root), str(out_root), d.id, cfg_dict, str(target_path))
                                          for d in demos], jobs)
    bdemos = [r["demo"] for r in results]
    inputs = input_hashes(in_root, demos)
    inputs["target_robot"] = sha256_text(canonical_json(target.to_dict()))
    m = {
        "task": manifest.get("task"),
        "cameras": manifest.get("cameras", {}),
        "robots": {"target": target.to_dict(urdf_ref=f"robots/{target.urdf_path.name}")},
        "config_hash": cfg.hash(),
        "run": run_info("crosspaint", cfg, inputs),
        "lineage": {
            "source_run": manifest.get("run"),
            "painted_camera": cpc.camera,
            "passthrough_cameras": sorted(c for c in manifest.get("cameras", {}) if c != cpc.camera),
            "source_demos": {d.id: {"source_demo_id": d.source_demo_id, "dropped_frames": d.dropped_frames,
                                    "flagged_frames": r["flagged"]} for d, r in zip(bdemos, results)},
        },
    }
    out = export_augmented(out_root, bdemos, m)
    log.info("crosspaint_done", extra={"fields": {"demos": len(bdemos), "dropped": out["total_dropped_frames"]}})
    return out
