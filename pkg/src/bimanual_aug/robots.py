"""Robot configuration files: URDF reference, EE link, home pose, gripper map, bases."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional

from .geometry import SE3Pose
from .kinematics import GripperMap, JointConfig, KinematicChain, load_urdf

DATA_DIR = Path(__file__).parent / "data"
BUILTIN_ROBOTS = {"panda": DATA_DIR / "panda.json", "ur5e_bimanual": DATA_DIR / "ur5e_bimanual.json"}


@dataclass(eq=False)
class RobotConfig:
    name: str
    urdf_path: Path
    ee_link: str
    home: JointConfig
    gripper: GripperMap
    grasp_offset: SE3Pose = field(default_factory=SE3Pose.identity)
    bases: Dict[str, SE3Pose] = field(default_factory=dict)
    source_path: Optional[Path] = None

    @property
    def chain(self) -> KinematicChain:
        return _load_chain(str(self.urdf_path), self.ee_link)

    def base(self, side: str) -> SE3Pose:
        try:
            return self.bases[side]
        except KeyError:
            raise KeyError(f"robot {self.name!r} has no base pose for side {side!r}") from None

    def to_dict(self, urdf_ref: Optional[str] = None):
        return {
            "name": self.name,
            "urdf": urdf_ref if urdf_ref is not None else self.urdf_path.name,
            "ee_link": self.ee_link,
            "home": {k: float(v) for k, v in self.home.items()},
            "gripper": self.gripper.to_dict(),
            "grasp_offset": self.grasp_offset.to_list(),
            "bases": {k: v.to_list() for k, v in sorted(self.bases.items())},
        }

    @classmethod
    def from_dict(cls, d, base_dir: Path):
        urdf = Path(d["urdf"])
        if not urdf.is_absolute():
            urdf = Path(base_dir) / urdf
        cfg = cls(
            name=d["name"],
            urdf_path=urdf,
            ee_link=d["ee_link"],
            home={k: float(v) for k, v in d["home"].items()},
            gripper=GripperMap.from_dict(d["gripper"]),
            grasp_offset=SE3Pose.from_list(d.get("grasp_offset", [0, 0, 0, 1, 0, 0, 0])),
            bases={k: SE3Pose.from_list(v) for k, v in d.get("bases", {}).items()},
        )
        missing = [n for n in cfg.chain.joint_names if n not in cfg.home]
        if missing:
            raise ValueError(f"robot {cfg.name!r}: home config lacks joints {missing}")
        return cfg


@lru_cache(maxsize=None)
def _load_chain(path: str, ee_link: str) -> KinematicChain:
    return load_urdf(path, ee_link=ee_link)


def load_robot_config(ref) -> RobotConfig:
    """Load a robot config from a JSON path or a builtin name ('panda', 'ur5e_bimanual')."""
    path = BUILTIN_ROBOTS.get(str(ref), Path(ref))
    with open(path) as f:
        d = json.load(f)
    cfg = RobotConfig.from_dict(d, Path(path).parent)
    cfg.source_path = Path(path)
    return cfg
