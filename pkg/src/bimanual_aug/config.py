"""Pipeline configuration: JSON file plus ``--set key=value`` overrides, stable hash."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from .crosspaint import CrosspaintConfig
from .dataset import canonical_json, sha256_text
from .kinematics import IkParams
from .registration import IcpParams


@dataclass
class RetargetConfig:
    threshold: float = 0.35
    hysteresis: bool = True
    band: float = 0.05
    min_hold: int = 3
    # hand grasp frame in the wrist frame; None uses the dataset manifest's value (or identity)
    grasp_offset: Optional[List[float]] = None
    refine: bool = True
    visibility_rounds: int = 3
    hand_source: str = "synth"          # synth | file
    keypoint_file: str = "hand_keypoints.json"
    landmark_order: Optional[List[int]] = None
    sigma_pos: float = 0.0
    sigma_rot: float = 0.0
    bias_translation: float = 0.0
    bias_rotation_deg: float = 0.0
    tau_bg: float = 0.01
    workspace_box: Optional[list] = None
    # depth points farther than this from the raw hand estimate are ignored
    crop_radius: float = 0.2
    min_cloud_points: int = 30
    robot_dilation_px: int = 3


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: dict = field(default_factory=dict)
    retarget: RetargetConfig = field(default_factory=RetargetConfig)
    icp: IcpParams = field(default_factory=IcpParams)
    ik: IkParams = field(default_factory=IkParams)
    crosspaint: dict = field(default_factory=dict)
    # rigid transform applied to every pose before cross-painting ([tx,ty,tz,qw,qx,qy,qz])
    align: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])

    def to_dict(self):
        return {
            "seed": self.seed,
            "paths": dict(self.paths),
            "retarget": asdict(self.retarget),
            "icp": asdict(self.icp),
            "ik": asdict(self.ik),
            "crosspaint": self.crosspaint_config().to_dict(),
            "align": list(self.align),
        }

    def hash(self) -> str:
        """sha256 of the canonical JSON, excluding paths (outputs depend on content, not location)."""
        d = self.to_dict()
        d.pop("paths")
        return sha256_text(canonical_json(d))

    def crosspaint_config(self) -> CrosspaintConfig:
        d = dict(self.crosspaint)
        d.setdefault("seed", self.seed)
        d["ik"] = self.ik
        if "brightness_range" in d:
            d["brightness_range"] = tuple(d["brightness_range"])
        if "light" in d:
            d["light"] = tuple(d["light"])
        unknown = set(d) - {f.name for f in fields(CrosspaintConfig)}
        if unknown:
            raise ValueError(f"unknown crosspaint keys {sorted(unknown)}")
        return CrosspaintConfig(**d)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(
            seed=int(d.get("seed", 0)),
            paths=dict(d.get("paths", {})),
            retarget=_build(RetargetConfig, d.get("retarget")),
            icp=_build(IcpParams, d.get("icp")),
            ik=_build(IkParams, d.get("ik")),
            crosspaint={k: v for k, v in (d.get("crosspaint") or {}).items() if k not in ("ik", "seed")},
            align=list(d.get("align", [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])),
        )
        cfg.crosspaint_config()  # validate early
        if cfg.retarget.hand_source not in ("synth", "file"):
            raise ValueError("retarget.hand_source must be 'synth' or 'file'")
        return cfg


def _build(cls, d):
    d = dict(d or {})
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    return cls(**d)


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` overrides (values parsed as JSON when possible)."""
    d = json.loads(json.dumps(d))
    for item in overrides or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        node = d
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = parse_value(val)
    return d


def load_config(path=None, overrides=()) -> PipelineConfig:
    d = {}
    if path is not None:
        with open(path) as f:
            d = json.load(f)
    cfg = PipelineConfig.from_dict(apply_overrides(d, overrides))
    base = Path(path).parent if path is not None else Path.cwd()
    for key, p in cfg.paths.items():
        if not (base / p).exists() and not Path(p).exists():
            raise FileNotFoundError(f"config path {key}={p!r} does not exist")
    return cfg
