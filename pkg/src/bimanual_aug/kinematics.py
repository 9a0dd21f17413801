"""URDF kinematic trees: parsing, forward kinematics, geometric Jacobian, damped
least-squares IK, and the linear gripper width <-> finger joint map."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CycleError, MissingJointValue, NoConvergence, ParseError, UnsupportedElement
from .geometry import SE3Pose, compose, pose_error, quat_from_rotvec, quat_multiply, quat_to_matrix, quat_to_rotvec

JointConfig = Dict[str, float]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class Visual:
    kind: str  # box | cylinder | sphere | mesh
    params: dict
    origin: SE3Pose = field(default_factory=SE3Pose.identity)
    rgba: Tuple[float, float, float, float] = (0.7, 0.7, 0.7, 1.0)


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    visuals: Tuple[Visual, ...] = ()


@dataclass(frozen=True, eq=False)
class Joint:
    name: str
    type: str  # revolute | prismatic | fixed
    parent: str
    child: str
    origin: SE3Pose
    axis: np.ndarray
    limits: Tuple[float, float] = (0.0, 0.0)

    @property
    def movable(self):
        return self.type != "fixed"

    def motion(self, value: float) -> SE3Pose:
        if self.type == "revolute":
            return SE3Pose(np.zeros(3), quat_from_rotvec(self.axis * value))
        if self.type == "prismatic":
            return SE3Pose(self.axis * value)
        return SE3Pose.identity()


class KinematicChain:
    """A parsed URDF tree. Immutable after construction."""

    def __init__(self, name, links: List[Link], joints: List[Joint], root: str,
                 ee_link: Optional[str] = None, base_dir: Optional[Path] = None):
        self.name = name
        self.links = {l.name: l for l in links}
        self.link_names = [l.name for l in links]
        self.joints = list(joints)
        self.root = root
        self.base_dir = Path(base_dir) if base_dir is not None else None
        self._joint_by_child = {j.child: j for j in self.joints}
        self._joint_by_name = {j.name: j for j in self.joints}
        self._children = {n: [] for n in self.link_names}
        for j in self.joints:
            self._children[j.parent].append(j)
        # breadth-first joint order from the root
        order, queue = [], deque([root])
        while queue:
            link = queue.popleft()
            for j in self._children[link]:
                order.append(j)
                queue.append(j.child)
        self._order = order
        self.ee_link = ee_link
        self._path_cache = {}

    # -- structure
    @property
    def movable_joints(self) -> List[Joint]:
        return [j for j in self.joints if j.movable]

    @property
    def joint_names(self) -> List[str]:
        return [j.name for j in self.movable_joints]

    def joint(self, name) -> Joint:
        return self._joint_by_name[name]

    def link_index(self, name) -> int:
        return self.link_names.index(name)

    def path_joints(self, link: Optional[str] = None) -> List[Joint]:
        """Joints from the root to ``link`` (default: the end-effector), root first."""
        link = link or self.ee_link
        if link is None:
            raise ValueError("no end-effector link configured")
        if link not in self.links:
            raise KeyError(f"unknown link {link!r}")
        if link not in self._path_cache:
            path = []
            cur = link
            while cur != self.root:
                j = self._joint_by_child[cur]
                path.append(j)
                cur = j.parent
            self._path_cache[link] = path[::-1]
        return self._path_cache[link]

    def active_joint_names(self, link: Optional[str] = None) -> List[str]:
        return [j.name for j in self.path_joints(link) if j.movable]

    def limits(self, names=None):
        names = self.joint_names if names is None else names
        lim = np.array([self._joint_by_name[n].limits for n in names], dtype=np.float64)
        return lim.reshape(-1, 2)

    def zero_config(self) -> JointConfig:
        return {j.name: float(np.clip(0.0, *j.limits)) for j in self.movable_joints}

    def clamp(self, q: JointConfig) -> JointConfig:
        return {n: float(np.clip(v, *self._joint_by_name[n].limits)) if n in self._joint_by_name else v
                for n, v in q.items()}

    def within_limits(self, q: JointConfig, tol=1e-12) -> bool:
        for j in self.movable_joints:
            v = q.get(j.name)
            if v is None or v < j.limits[0] - tol or v > j.limits[1] + tol:
                return False
        return True

    def random_config(self, rng, margin=0.0) -> JointConfig:
        q = {}
        for j in self.movable_joints:
            lo, hi = j.limits
            span = hi - lo
            q[j.name] = float(rng.uniform(lo + margin * span, hi - margin * span))
        return q


# --------------------------------------------------------------------------- URDF parsing

def _floats(text, n, default):
    if text is None:
        return np.array(default, dtype=np.float64)
    vals = [float(v) for v in text.split()]
    if len(vals) != n:
        raise ParseError(f"expected {n} numbers, got {text!r}")
    return np.array(vals, dtype=np.float64)


def _origin(elem) -> SE3Pose:
    o = elem.find("origin") if elem is not None else None
    if o is None:
        return SE3Pose.identity()
    return SE3Pose.from_xyz_rpy(_floats(o.get("xyz"), 3, [0, 0, 0]), _floats(o.get("rpy"), 3, [0, 0, 0]))


def _color(mat, named):
    if mat is None:
        return None
    c = mat.find("color")
    if c is not None and c.get("rgba"):
        return tuple(float(v) for v in _floats(c.get("rgba"), 4, [0.7, 0.7, 0.7, 1]))
    return named.get(mat.get("name"))


def _geometry(geom, link_name):
    if geom is None or len(geom) == 0:
        raise ParseError(f"link {link_name!r}: visual without geometry")
    g = geom[0]
    if g.tag == "box":
        return "box", {"size": _floats(g.get("size"), 3, [0, 0, 0]).tolist()}
    if g.tag == "cylinder":
        return "cylinder", {"radius": float(g.get("radius")), "length": float(g.get("length"))}
    if g.tag == "sphere":
        return "sphere", {"radius": float(g.get("radius"))}
    if g.tag == "mesh":
        fname = g.get("filename")
        if not fname:
            raise ParseError(f"link {link_name!r}: mesh without filename")
        return "mesh", {"filename": fname, "scale": _floats(g.get("scale"), 3, [1, 1, 1]).tolist()}
    raise UnsupportedElement(f"link {link_name!r}: unsupported geometry <{g.tag}>")


def parse_urdf(text: str, ee_link: Optional[str] = None, base_dir=None) -> KinematicChain:
    """Parse URDF XML into a :class:`KinematicChain`.

    ``continuous`` joints become revolute joints limited to ±2π. Mesh filenames are
    kept as references and resolved against ``base_dir`` at render time.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ParseError(f"malformed URDF XML: {exc}") from exc
    if root.tag != "robot":
        raise ParseError(f"root element must be <robot>, got <{root.tag}>")

    named = {}
    for mat in root.findall("material"):
        c = _color(mat, {})
        if c is not None:
            named[mat.get("name")] = c

    links = []
    for le in root.findall("link"):
        name = le.get("name")
        if not name:
            raise ParseError("link without name")
        visuals = []
        for ve in le.findall("visual"):
            kind, params = _geometry(ve.find("geometry"), name)
            rgba = _color(ve.find("material"), named) or (0.7, 0.7, 0.7, 1.0)
            visuals.append(Visual(kind, params, _origin(ve), rgba))
        links.append(Link(name, tuple(visuals)))
    names = [l.name for l in links]
    if len(set(names)) != len(names):
        raise ParseError("duplicate link names")
    if not links:
        raise ParseError("URDF has no links")

    joints = []
    for je in root.findall("joint"):
        name, jtype = je.get("name"), je.get("type")
        parent = je.find("parent")
        child = je.find("child")
        if parent is None or child is None:
            raise ParseError(f"joint {name!r} needs <parent> and <child>")
        parent, child = parent.get("link"), child.get("link")
        for ln in (parent, child):
            if ln not in names:
                raise ParseError(f"joint {name!r} references missing link {ln!r}")
        axis = np.array([1.0, 0.0, 0.0])
        limits = (0.0, 0.0)
        if jtype in ("revolute", "prismatic", "continuous"):
            ae = je.find("axis")
            if ae is not None:
                axis = _floats(ae.get("xyz"), 3, [1, 0, 0])
            n = np.linalg.norm(axis)
            if n == 0:
                raise ParseError(f"joint {name!r} has a zero axis")
            axis = axis / n
            if jtype == "continuous":
                jtype, limits = "revolute", (-TWO_PI, TWO_PI)
            else:
                le = je.find("limit")
                if le is None or le.get("lower") is None or le.get("upper") is None:
                    raise ParseError(f"joint {name!r} needs <limit lower upper>")
                limits = (float(le.get("lower")), float(le.get("upper")))
                if limits[0] > limits[1]:
                    raise ParseError(f"joint {name!r} has lower limit above upper")
        elif jtype != "fixed":
            raise UnsupportedElement(f"joint {name!r}: unsupported type {jtype!r}")
        joints.append(Joint(name, jtype, parent, child, _origin(je), axis, limits))
    if len({j.name for j in joints}) != len(joints):
        raise ParseError("duplicate joint names")

    parent_of = {}
    for j in joints:
        if j.child in parent_of:
            raise CycleError(f"link {j.child!r} has more than one parent joint")
        parent_of[j.child] = j.parent
    roots = [n for n in names if n not in parent_of]
    if not roots:
        raise CycleError("joint graph has no root link (cycle)")
    for n in names:
        seen, cur = set(), n
        while cur in parent_of:
            if cur in seen:
                raise CycleError(f"cycle through link {cur!r}")
            seen.add(cur)
            cur = parent_of[cur]
    if len(roots) > 1:
        raise ParseError(f"joint graph is not connected; roots {roots}")

    if ee_link is None:
        has_child = {j.parent for j in joints}
        leaves = [n for n in names if n not in has_child]
        ee_link = leaves[0] if len(leaves) == 1 else None
    elif ee_link not in names:
        raise ParseError(f"end-effector link {ee_link!r} not in URDF")
    return KinematicChain(root.get("name", "robot"), links, joints, roots[0], ee_link, base_dir)


def load_urdf(path, ee_link=None) -> KinematicChain:
    path = Path(path)
    return parse_urdf(path.read_text(), ee_link=ee_link, base_dir=path.parent)


# --------------------------------------------------------------------------- FK / Jacobian

def _value(q, joint):
    try:
        return float(q[joint.name])
    except KeyError:
        raise MissingJointValue(f"no value for joint {joint.name!r}") from None


def forward_kinematics(chain: KinematicChain, q: JointConfig, base: Optional[SE3Pose] = None) -> Dict[str, SE3Pose]:
    """World pose of every link."""
    poses = {chain.root: base if base is not None else SE3Pose.identity()}
    for j in chain._order:
        frame = compose(poses[j.parent], j.origin)
        if j.movable:
            frame = compose(frame, j.motion(_value(q, j)))
        poses[j.child] = frame
    return poses


def link_pose(chain: KinematicChain, q: JointConfig, link: Optional[str] = None,
              base: Optional[SE3Pose] = None) -> SE3Pose:
    """Pose of a single link, walking only its root path."""
    pose = base if base is not None else SE3Pose.identity()
    for j in chain.path_joints(link):
        pose = compose(pose, j.origin)
        if j.movable:
            pose = compose(pose, j.motion(_value(q, j)))
    return pose


def _path_frames(chain, q, link, base):
    """EE pose plus (world axis, world origin, type) for each movable path joint."""
    pose = base if base is not None else SE3Pose.identity()
    cols = []
    for j in chain.path_joints(link):
        pose = compose(pose, j.origin)
        if j.movable:
            cols.append((quat_to_matrix(pose.rotation) @ j.axis, pose.translation.copy(), j.type))
            pose = compose(pose, j.motion(_value(q, j)))
    return pose, cols


def jacobian(chain: KinematicChain, q: JointConfig, link: Optional[str] = None,
             base: Optional[SE3Pose] = None) -> np.ndarray:
    """Geometric Jacobian (6 x n): rows are world linear then angular velocity of the
    link origin; columns follow :meth:`KinematicChain.active_joint_names`."""
    ee, cols = _path_frames(chain, q, link, base)
    return _jacobian_from(ee, cols)


def _jacobian_from(ee, cols):
    J = np.zeros((6, len(cols)))
    for k, (axis, origin, jtype) in enumerate(cols):
        if jtype == "revolute":
            J[:3, k] = np.cross(axis, ee.translation - origin)
            J[3:, k] = axis
        else:
            J[:3, k] = axis
    return J


# --------------------------------------------------------------------------- IK

@dataclass(frozen=True)
class IkParams:
    damping: float = 0.05
    max_iters: int = 200
    pos_tol: float = 1e-4
    rot_tol: float = 1e-3
    # per-iteration error clamp keeps steps in the linear regime
    max_pos_step: float = 0.2
    max_rot_step: float = 0.5
    # weight turning rotation error (rad) into metres for ranking iterates
    rot_weight: float = 0.1
    # Levenberg-Marquardt schedule: halve damping after an improving step, quadruple
    # it (and reject the step) otherwise; ``damping`` is the starting value
    adaptive: bool = True
    min_damping: float = 1e-4
    max_damping: float = 10.0

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__})


@dataclass
class IkResult:
    q: JointConfig
    pos_error: float
    rot_error: float
    iterations: int


def _pose_residual(current: SE3Pose, target: SE3Pose):
    dp = target.translation - current.translation
    q_err = quat_multiply(target.rotation, current.rotation * np.array([1.0, -1.0, -1.0, -1.0]))
    dr = quat_to_rotvec(q_err)
    return dp, dr


def _dls_step(J, e, lam):
    return J.T @ np.linalg.solve(J @ J.T + lam * lam * np.eye(J.shape[0]), e)


def solve_ik_detailed(chain: KinematicChain, target: SE3Pose, seed: JointConfig,
                      params: IkParams = IkParams(), link: Optional[str] = None,
                      base: Optional[SE3Pose] = None) -> IkResult:
    """Damped least squares on the 6-D (position, rotation-vector) pose error.

    Joints off the root->link path keep their seed values. Steps are clamped to
    joint limits. Raises :class:`NoConvergence` after ``max_iters``.
    """
    names = chain.active_joint_names(link)
    missing = [j.name for j in chain.movable_joints if j.name not in seed]
    if missing:
        raise MissingJointValue(f"seed lacks joints {missing}")
    lim = chain.limits(names)
    x = np.clip(np.array([seed[n] for n in names], dtype=np.float64), lim[:, 0], lim[:, 1])
    q = dict(seed)
    lam = params.damping
    best = (np.inf, None, None, None)
    history = []

    def evaluate(x):
        q.update(zip(names, x.tolist()))
        ee, cols = _path_frames(chain, q, link, base)
        dp, dr = _pose_residual(ee, target)
        pe, re = float(np.linalg.norm(dp)), float(np.linalg.norm(dr))
        return ee, cols, dp, dr, pe, re, float(np.hypot(pe, params.rot_weight * re))

    state = evaluate(x)
    for it in range(params.max_iters + 1):
        ee, cols, dp, dr, pe, re, score = state
        if score < best[0]:
            best = (score, dict(zip(names, x.tolist())), pe, re)
        history.append(best[0])
        if pe <= params.pos_tol and re <= params.rot_tol:
            q.update(zip(names, x.tolist()))
            return IkResult(dict(q), pe, re, it)
        if it == params.max_iters:
            break
        if pe > params.max_pos_step:
            dp = dp * (params.max_pos_step / pe)
        if re > params.max_rot_step:
            dr = dr * (params.max_rot_step / re)
        e = np.concatenate([dp, dr])
        J = _jacobian_from(ee, cols)
        dx = _dls_step(J, e, lam)
        # joints pinned at a limit and pushed outward drop out; the rest re-solve
        pinned = ((x <= lim[:, 0]) & (dx < 0)) | ((x >= lim[:, 1]) & (dx > 0))
        if pinned.any() and not pinned.all():
            dx = np.zeros_like(dx)
            dx[~pinned] = _dls_step(J[:, ~pinned], e, lam)
        x_new = np.clip(x + dx, lim[:, 0], lim[:, 1])
        trial = evaluate(x_new)
        if not params.adaptive or trial[-1] < score:
            x, state = x_new, trial
            if params.adaptive:
                lam = max(lam * 0.5, params.min_damping)
        else:
            # rejected step: stay put and damp harder
            lam = min(lam * 4.0, params.max_damping)
    best_q = {**seed, **best[1]}
    raise NoConvergence(best[0], best_q=best_q, error_history=history, pos_error=best[2], rot_error=best[3])


def solve_ik(chain: KinematicChain, target: SE3Pose, seed: JointConfig,
             params: IkParams = IkParams(), link: Optional[str] = None,
             base: Optional[SE3Pose] = None) -> JointConfig:
    return solve_ik_detailed(chain, target, seed, params, link, base).q


def ik_residual(chain, q, target, link=None, base=None):
    return pose_error(link_pose(chain, q, link, base), target)


# --------------------------------------------------------------------------- gripper

@dataclass(frozen=True)
class GripperMap:
    """Per-finger linear map ``joint = scale * width + offset``."""

    joints: Tuple[str, ...]
    scale: Tuple[float, ...]
    offset: Tuple[float, ...]
    max_width: float

    @classmethod
    def from_dict(cls, d):
        joints = tuple(d["joints"])
        scale = tuple(float(v) for v in d["scale"])
        offset = tuple(float(v) for v in d.get("offset", [0.0] * len(joints)))
        if not (len(joints) == len(scale) == len(offset)):
            raise ValueError("gripper map lists must have equal length")
        return cls(joints, scale, offset, float(d["max_width"]))

    def to_dict(self):
        return {"joints": list(self.joints), "scale": list(self.scale),
                "offset": list(self.offset), "max_width": self.max_width}


def gripper_width_to_joints(chain: KinematicChain, width: float, gmap: GripperMap) -> JointConfig:
    w = float(np.clip(width, 0.0, gmap.max_width))
    out = {}
    for name, s, o in zip(gmap.joints, gmap.scale, gmap.offset):
        lo, hi = chain.joint(name).limits
        out[name] = float(np.clip(s * w + o, lo, hi))
    return out
