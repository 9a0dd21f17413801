"""Demonstration data model and the on-disk dataset format.

Layout of a dataset root::

    manifest.json                    task, cameras, robot configs, demo index (written last)
    cam_<name>/plate_{rgb,depth}.png background plates (source datasets)
    robots/<urdf>                    URDFs referenced by the manifest
    <demo_id>/frames.jsonl           one frame record per line
    <demo_id>/cam_<name>/rgb_<i>.png, depth_<i>.png

Poses are 7-vectors ``[tx, ty, tz, qw, qx, qy, qz]``; JSON floats use Python's
shortest round-trip repr, so a load after export reproduces every float exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ManifestError, MissingAction, SchemaError
from .geometry import SE3Pose, compose
from .hand_retarget import HUMAN, ROBOT, EndEffectorAction, HandKeypoints

SOURCE_FORMAT = "bimanual_aug/source"
AUGMENTED_FORMAT = "bimanual_aug/augmented"
FORMAT_VERSION = 1
SIDES = ("left", "right")


def other_side(side: str) -> str:
    return "right" if side == "left" else "left"


# --------------------------------------------------------------------------- json helpers

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_json_atomic(path, obj, indent=2):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=indent, allow_nan=False)
        f.write("\n")
    os.replace(tmp, path)


# --------------------------------------------------------------------------- source data

@dataclass
class RobotState:
    pose: SE3Pose
    gripper_width: Optional[float] = None

    def to_dict(self):
        return {"pose": self.pose.to_list(),
                "gripper_width": None if self.gripper_width is None else float(self.gripper_width)}

    @classmethod
    def from_dict(cls, d):
        w = d.get("gripper_width")
        return cls(SE3Pose.from_list(d["pose"]), None if w is None else float(w))


@dataclass
class HandState:
    keypoints: HandKeypoints
    low_fidelity: bool = False

    def to_dict(self):
        return {**self.keypoints.to_dict(), "low_fidelity": bool(self.low_fidelity)}

    @classmethod
    def from_dict(cls, d):
        return cls(HandKeypoints.from_dict(d), bool(d.get("low_fidelity", False)))


@dataclass
class TrajectoryFrame:
    index: int
    timestamp: float
    observations: Dict[str, Dict[str, str]]  # camera -> {"rgb": relpath, "depth": relpath}
    robot_state: RobotState
    robot_joints: Optional[Dict[str, float]] = None
    hand_state: Optional[HandState] = None
    robot_action: Optional[EndEffectorAction] = None
    human_action: Optional[EndEffectorAction] = None
    low_fidelity: bool = False
    notes: List[str] = field(default_factory=list)

    def to_dict(self):
        return {
            "index": int(self.index),
            "timestamp": float(self.timestamp),
            "observations": self.observations,
            "robot_state": self.robot_state.to_dict(),
            "robot_joints": None if self.robot_joints is None else {k: float(v) for k, v in self.robot_joints.items()},
            "hand_state": None if self.hand_state is None else self.hand_state.to_dict(),
            "robot_action": None if self.robot_action is None else self.robot_action.to_dict(),
            "human_action": None if self.human_action is None else self.human_action.to_dict(),
            "low_fidelity": bool(self.low_fidelity),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            index=int(d["index"]),
            timestamp=float(d["timestamp"]),
            observations={k: dict(v) for k, v in d["observations"].items()},
            robot_state=RobotState.from_dict(d["robot_state"]),
            robot_joints=None if d.get("robot_joints") is None else {k: float(v) for k, v in d["robot_joints"].items()},
            hand_state=None if d.get("hand_state") is None else HandState.from_dict(d["hand_state"]),
            robot_action=None if d.get("robot_action") is None else EndEffectorAction.from_dict(d["robot_action"]),
            human_action=None if d.get("human_action") is None else EndEffectorAction.from_dict(d["human_action"]),
            low_fidelity=bool(d.get("low_fidelity", False)),
            notes=list(d.get("notes", [])),
        )


@dataclass
class Demonstration:
    id: str
    task: str
    robot_side: str
    frames: List[TrajectoryFrame]
    success: bool = True

    def index_entry(self):
        return {"id": self.id, "task": self.task, "robot_side": self.robot_side,
                "success": bool(self.success), "path": self.id, "num_frames": len(self.frames)}


# --------------------------------------------------------------------------- bimanual data

@dataclass
class ArmState:
    pose: SE3Pose
    gripper: Optional[str]
    gripper_width: Optional[float]
    provenance: str

    def to_dict(self):
        return {"pose": self.pose.to_list(), "gripper": self.gripper,
                "gripper_width": None if self.gripper_width is None else float(self.gripper_width),
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        w = d.get("gripper_width")
        return cls(SE3Pose.from_list(d["pose"]), d.get("gripper"), None if w is None else float(w), d["provenance"])


@dataclass
class BimanualFrame:
    index: int
    timestamp: float
    observations: Dict[str, Dict[str, str]]
    left_state: ArmState
    right_state: ArmState
    left_action: EndEffectorAction
    right_action: EndEffectorAction
    fidelity: dict = field(default_factory=dict)

    def provenance(self) -> Tuple[str, str]:
        return self.left_action.provenance, self.right_action.provenance

    def to_dict(self):
        return {
            "index": int(self.index), "timestamp": float(self.timestamp), "observations": self.observations,
            "left": {"state": self.left_state.to_dict(), "action": self.left_action.to_dict()},
            "right": {"state": self.right_state.to_dict(), "action": self.right_action.to_dict()},
            "fidelity": self.fidelity,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["index"]), float(d["timestamp"]), {k: dict(v) for k, v in d["observations"].items()},
                   ArmState.from_dict(d["left"]["state"]), ArmState.from_dict(d["right"]["state"]),
                   EndEffectorAction.from_dict(d["left"]["action"]), EndEffectorAction.from_dict(d["right"]["action"]),
                   dict(d.get("fidelity", {})))


@dataclass
class BimanualDemo:
    id: str
    task: str
    frames: List[BimanualFrame]
    source_demo_id: Optional[str] = None
    robot_side: Optional[str] = None
    success: bool = True
    dropped_frames: List[int] = field(default_factory=list)

    def index_entry(self):
        return {"id": self.id, "task": self.task, "source_demo_id": self.source_demo_id,
                "robot_side": self.robot_side, "success": bool(self.success), "path": self.id,
                "num_frames": len(self.frames), "dropped_frames": list(self.dropped_frames),
                "drop_count": len(self.dropped_frames)}


def provenance_ok(frame: BimanualFrame, mode: str = "mixed") -> bool:
    """Mixed data: exactly one robot side and one human side. Robot-only: both robot."""
    prov = frame.provenance()
    states = (frame.left_state.provenance, frame.right_state.provenance)
    if mode == "robot_only":
        return prov == (ROBOT, ROBOT) and states == prov
    return sorted(prov) == sorted((ROBOT, HUMAN)) and states == prov


# --------------------------------------------------------------------------- loading

def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise ManifestError(f"{path}: manifest not found")
    try:
        with open(path) as f:
            m = json.load(f)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(m, dict) or "demos" not in m or not isinstance(m["demos"], list):
        raise ManifestError(f"{path}: manifest needs a 'demos' list")
    return m


def _read_records(root: Path, entry: dict, loader):
    demo_id = entry.get("id")
    rel = Path(entry.get("path", demo_id)) / "frames.jsonl"
    path = root / rel
    if not path.is_file():
        raise SchemaError("frames.jsonl missing", locus=str(rel))
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            locus = f"{rel}:{lineno}"
            try:
                records.append(loader(json.loads(line)))
            except SchemaError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"bad frame record ({type(exc).__name__}: {exc})", locus=locus) from exc
    prev = None
    cams = None
    for k, fr in enumerate(records):
        locus = f"{rel}:frame {fr.index}"
        if prev is not None and not fr.timestamp > prev:
            raise SchemaError(f"timestamp {fr.timestamp!r} not after previous {prev!r}", locus=locus)
        prev = fr.timestamp
        cs = set(fr.observations)
        if cams is None:
            cams = cs
        elif cs != cams:
            raise SchemaError(f"camera set {sorted(cs)} differs from {sorted(cams)}", locus=locus)
    return records


def _check_source_frame(fr: TrajectoryFrame, locus):
    if fr.robot_action is not None and fr.robot_action.provenance != ROBOT:
        raise SchemaError("robot_action must have provenance 'robot'", locus=locus)
    if fr.human_action is not None and fr.human_action.provenance != HUMAN:
        raise SchemaError("human_action must have provenance 'human_retargeted'", locus=locus)


def load_dataset(root) -> List[Demonstration]:
    """Load and validate every demonstration listed in a source dataset manifest."""
    root = Path(root)
    m = load_manifest(root)
    fmt = m.get("format", SOURCE_FORMAT)
    if fmt != SOURCE_FORMAT:
        raise ManifestError(f"{root}: expected a source dataset, found format {fmt!r}")
    demos = []
    for k, e in enumerate(m["demos"]):
        locus = f"manifest.json:demos[{k}]"
        for key in ("id", "robot_side"):
            if key not in e:
                raise SchemaError(f"missing {key!r}", locus=locus)
        if e["robot_side"] not in SIDES:
            raise SchemaError(f"robot_side must be left/right, got {e['robot_side']!r}", locus=locus)
        frames = _read_records(root, e, TrajectoryFrame.from_dict)
        for fr in frames:
            _check_source_frame(fr, f"{e['id']}/frames.jsonl:frame {fr.index}")
        demos.append(Demonstration(e["id"], e.get("task", m.get("task", "")), e["robot_side"], frames,
                                   bool(e.get("success", True))))
    return demos


def load_augmented(root) -> List[BimanualDemo]:
    root = Path(root)
    m = load_manifest(root)
    if m.get("format") != AUGMENTED_FORMAT:
        raise ManifestError(f"{root}: expected an augmented dataset, found format {m.get('format')!r}")
    mode = m.get("provenance_mode", "mixed")
    demos = []
    for e in m["demos"]:
        frames = _read_records(root, e, BimanualFrame.from_dict)
        for fr in frames:
            if not provenance_ok(fr, mode):
                raise SchemaError(f"provenance {fr.provenance()} violates mode {mode!r}",
                                  locus=f"{e['id']}/frames.jsonl:frame {fr.index}")
        demos.append(BimanualDemo(e["id"], e.get("task", m.get("task", "")), frames, e.get("source_demo_id"),
                                  e.get("robot_side"), bool(e.get("success", True)),
                                  list(e.get("dropped_frames", []))))
    return demos


# --------------------------------------------------------------------------- writing

def write_frames(path, records: Sequence):
    with open(path, "w") as f:
        for r in records:
            f.write(canonical_json(r.to_dict()))
            f.write("\n")


def write_demo(root, demo) -> None:
    d = Path(root) / demo.id
    d.mkdir(parents=True, exist_ok=True)
    write_frames(d / "frames.jsonl", demo.frames)


def write_manifest(root, manifest: dict) -> None:
    write_json_atomic(Path(root) / "manifest.json", manifest)


# --------------------------------------------------------------------------- operations

def align_frames(demo: Demonstration, T: SE3Pose) -> Demonstration:
    """Left-multiply every robot pose and action by ``T``; observations (and the
    camera-frame hand keypoints) are left untouched."""
    frames = []
    for fr in demo.frames:
        frames.append(replace(
            fr,
            robot_state=RobotState(compose(T, fr.robot_state.pose), fr.robot_state.gripper_width),
            robot_action=None if fr.robot_action is None else fr.robot_action.transformed(T),
            human_action=None if fr.human_action is None else fr.human_action.transformed(T),
            notes=list(fr.notes),
        ))
    return replace(demo, frames=frames)


@dataclass
class BalanceReport:
    counts: Dict[str, Dict[str, int]]
    balanced: bool
    imbalanced: List[str]
    warnings: List[str]

    def to_dict(self):
        return {"counts": self.counts, "balanced": self.balanced,
                "imbalanced": self.imbalanced, "warnings": self.warnings}


def check_balance(demos: Sequence, tolerance: float = 0.05) -> BalanceReport:
    """Count demos per (task, robot_side); a task is imbalanced when
    |left - right| / (left + right) exceeds ``tolerance``."""
    counts: Dict[str, Dict[str, int]] = defaultdict(lambda: {"left": 0, "right": 0})
    for d in demos:
        counts[d.task][d.robot_side] += 1
    warnings = []
    if not demos:
        warnings.append("no demonstrations; trivially balanced")
    imbalanced = []
    for task, c in sorted(counts.items()):
        total = c["left"] + c["right"]
        if total and abs(c["left"] - c["right"]) / total > tolerance:
            imbalanced.append(task)
            warnings.append(f"task {task!r} imbalanced: {c['left']} left vs {c['right']} right")
    return BalanceReport({k: dict(v) for k, v in sorted(counts.items())}, not imbalanced, imbalanced, warnings)


def _robot_arm_state(fr: TrajectoryFrame) -> ArmState:
    return ArmState(fr.robot_state.pose, fr.robot_action.gripper if fr.robot_action else None,
                    fr.robot_state.gripper_width, ROBOT)


def _human_arm_state(fr: TrajectoryFrame) -> ArmState:
    a = fr.human_action
    return ArmState(a.pose, a.gripper, None, HUMAN)


def mix_bimanual(demo: Demonstration, drop_low_fidelity: bool = True,
                 observations: Optional[Dict[int, Dict[str, Dict[str, str]]]] = None,
                 fidelity: Optional[Dict[int, dict]] = None,
                 flagged: Sequence[int] = ()) -> Tuple[List[BimanualFrame], List[int]]:
    """Assign robot actions/states to ``robot_side`` and retargeted human ones to the
    other side. Returns (frames, dropped frame indices).

    ``flagged`` lists extra frame indices marked low-fidelity downstream (e.g. IK
    failures); ``observations`` substitutes cross-painted image references.
    """
    flagged = set(flagged)
    out, dropped = [], []
    for fr in demo.frames:
        low = fr.low_fidelity or fr.index in flagged or (fr.hand_state is not None and fr.hand_state.low_fidelity)
        if low and drop_low_fidelity:
            dropped.append(fr.index)
            continue
        if fr.robot_action is None or fr.human_action is None:
            raise MissingAction(f"demo {demo.id!r} frame {fr.index} lacks "
                                f"{'robot_action' if fr.robot_action is None else 'human_action'}")
        robot = (_robot_arm_state(fr), fr.robot_action)
        human = (_human_arm_state(fr), fr.human_action)
        left, right = (robot, human) if demo.robot_side == "left" else (human, robot)
        obs = fr.observations if observations is None else observations[fr.index]
        fid = dict((fidelity or {}).get(fr.index, {}))
        if low:
            fid["low_fidelity"] = True
        out.append(BimanualFrame(fr.index, fr.timestamp, obs, left[0], right[0], left[1], right[1], fid))
    return out, dropped


def export_augmented(out_root, demos: Sequence[BimanualDemo], manifest: dict,
                     provenance_mode: str = "mixed") -> dict:
    """Write frame records for every demo, then the manifest (atomically, last).

    ``manifest`` carries task, cameras, robots, config hash and run metadata; the
    demo index and drop counts are filled in here.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    for d in demos:
        for fr in d.frames:
            if not provenance_ok(fr, provenance_mode):
                raise SchemaError(f"provenance {fr.provenance()} violates mode {provenance_mode!r}",
                                  locus=f"{d.id}:frame {fr.index}")
        write_demo(out_root, d)
    m = dict(manifest)
    m.update({
        "format": AUGMENTED_FORMAT,
        "version": FORMAT_VERSION,
        "provenance_mode": provenance_mode,
        "demos": [d.index_entry() for d in demos],
        "total_dropped_frames": int(sum(len(d.dropped_frames) for d in demos)),
    })
    write_manifest(out_root, m)
    return m


def hash_tree(root, pattern="**/*.jsonl") -> Dict[str, str]:
    """Content hashes of files under ``root`` (relative path -> sha256)."""
    root = Path(root)
    out = {}
    for p in sorted(root.glob(pattern)):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def side_counts(demos: Sequence) -> Counter:
    return Counter(d.robot_side for d in demos)
