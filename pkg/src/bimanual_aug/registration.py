"""Rigid point-cloud registration: exact nearest neighbours, closed-form rigid fit, ICP."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCorrespondences, NoCorrespondences
from .geometry import SE3Pose, compose, quat_from_rotvec


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite points")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if n.shape != pts.shape:
                raise ValueError("normals must match points")
            if n.size and np.max(np.abs(np.linalg.norm(n, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must be unit length")
            object.__setattr__(self, "normals", n)

    def __len__(self):
        return len(self.points)

    def transformed(self, pose: SE3Pose) -> "PointCloud":
        n = None if self.normals is None else self.normals @ pose.rotation_matrix.T
        return PointCloud(pose.transform_points(self.points), n)


class SpatialIndex:
    """Immutable kd-tree over a cloud; safe to query from several threads."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("cannot index an empty cloud")
        self.points = pts
        self._tree = cKDTree(pts)

    def query(self, queries, radius=np.inf):
        """Nearest index per query (-1 when none within ``radius``, inclusive) and distance."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        bound = np.nextafter(radius, np.inf) if np.isfinite(radius) else np.inf
        dist, idx = self._tree.query(q, k=1, distance_upper_bound=bound)
        idx = np.where(np.isfinite(dist), idx, -1).astype(np.int64)
        return idx, dist


def nearest_neighbors(cloud, queries, radius=np.inf):
    """Exact nearest neighbour of each query within ``radius``; -1 marks none."""
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    return SpatialIndex(pts).query(queries, radius)[0]


# --------------------------------------------------------------------------- rigid fit

def fit_rigid(source, target, correspondences=None) -> SE3Pose:
    """Least-squares rotation + translation (no scale) mapping source onto target.

    ``correspondences`` is a (K, 2) array of (source index, target index) pairs;
    when omitted, rows are paired by position.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    tgt = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if correspondences is not None:
        c = np.asarray(correspondences, dtype=np.int64).reshape(-1, 2)
        src, tgt = src[c[:, 0]], tgt[c[:, 1]]
    elif len(src) != len(tgt):
        raise ValueError("source and target differ in length and no correspondences given")
    if len(src) < 3:
        raise DegenerateCorrespondences(f"need at least 3 correspondences, got {len(src)}")
    sc, tc = src.mean(axis=0), tgt.mean(axis=0)
    a, b = src - sc, tgt - tc
    for pts in (a, b):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
            raise DegenerateCorrespondences("correspondences are collinear or coincident")
    U, _, Vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    return SE3Pose.from_rotation_matrix(R, tc - R @ sc)


def _fit_point_to_plane(src, tgt, normals) -> SE3Pose:
    """One linearised point-to-plane step (small-angle), re-orthonormalised."""
    A = np.concatenate([np.cross(src, normals), normals], axis=1)
    b = np.einsum("ij,ij->i", tgt - src, normals)
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    return SE3Pose(x[3:], quat_from_rotvec(x[:3]))


# --------------------------------------------------------------------------- ICP

@dataclass(frozen=True)
class IcpParams:
    max_iters: int = 100
    corr_dist: float = 0.03
    converge_eps: float = 1e-6
    # centroid pre-alignment runs when the initial (ungated) rmse exceeds this; the
    # default 0 always centres first, which widens the rotation basin on compact shapes
    prealign_rmse: float = 0.0
    method: str = "point_to_point"

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__})


@dataclass
class IcpResult:
    transform: SE3Pose
    rmse: float
    iterations: int
    inlier_fraction: float
    # truncated objective sqrt(mean(min(d^2, corr_dist^2))); non-increasing by construction
    rmse_history: List[float] = field(default_factory=list)


def _truncated_rmse(dist, corr_dist):
    d = np.minimum(dist, corr_dist)
    return float(np.sqrt(np.mean(d * d)))


def icp_register(source: PointCloud, target: PointCloud, init: Optional[SE3Pose] = None,
                 params: IcpParams = IcpParams()) -> IcpResult:
    """Register ``source`` onto ``target``; the returned transform maps source into the
    target frame (target ≈ T · source)."""
    if len(source) == 0 or len(target) == 0:
        raise NoCorrespondences("empty point cloud")
    if params.method == "point_to_plane" and target.normals is None:
        raise ValueError("point_to_plane ICP needs target normals")
    index = SpatialIndex(target.points)
    src0 = source.points
    T = init if init is not None else SE3Pose.identity()
    cur = T.transform_points(src0)

    idx, dist = index.query(cur)
    if np.sqrt(np.mean(dist * dist)) > params.prealign_rmse:
        shift = SE3Pose(target.points.mean(axis=0) - cur.mean(axis=0))
        T = compose(shift, T)
        cur = T.transform_points(src0)

    idx, dist = index.query(cur)
    history = [_truncated_rmse(dist, params.corr_dist)]
    inl = dist <= params.corr_dist
    if inl.sum() < 3:
        raise NoCorrespondences(f"only {int(inl.sum())} source points within {params.corr_dist} m of the target")

    iterations = 0
    for _ in range(params.max_iters):
        if history[-1] <= 1e-12:
            break
        inl = dist <= params.corr_dist
        if inl.sum() < 3:
            break
        try:
            if params.method == "point_to_plane":
                delta = _fit_point_to_plane(cur[inl], target.points[idx[inl]], target.normals[idx[inl]])
            else:
                delta = fit_rigid(cur[inl], target.points[idx[inl]])
        except DegenerateCorrespondences:
            break
        T_new = compose(delta, T)
        cur_new = T_new.transform_points(src0)
        idx_new, dist_new = index.query(cur_new)
        r_new = _truncated_rmse(dist_new, params.corr_dist)
        if r_new > history[-1]:
            # only the linearised point-to-plane step can overshoot; keep the better iterate
            break
        iterations += 1
        prev = history[-1]
        T, cur, idx, dist = T_new, cur_new, idx_new, dist_new
        history.append(r_new)
        if prev - r_new <= params.converge_eps * max(prev, 1e-300):
            break

    inl = dist <= params.corr_dist
    rmse = float(np.sqrt(np.mean(dist[inl] ** 2))) if inl.any() else float("inf")
    return IcpResult(T, rmse, iterations, float(inl.mean()), history)
