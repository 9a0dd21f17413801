import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bimanual_aug.errors import DegenerateCorrespondences, NoCorrespondences
from bimanual_aug.geometry import SE3Pose, pose_error, quat_from_rotvec
from bimanual_aug.meshio import read_point_cloud, write_ply
from bimanual_aug.registration import (IcpParams, PointCloud, SpatialIndex, fit_rigid, icp_register,
                                       nearest_neighbors)
from bimanual_aug.synth import hand_geometry

from oracles import brute_force_nn, kabsch_reference
from strategies import random_pose

HAND = np.array(hand_geometry(0.6, "right")[1])


def test_fit_rigid_identity():
    pts = np.random.default_rng(0).normal(size=(20, 3))
    T = fit_rigid(pts, pts)
    assert pose_error(T, SE3Pose.identity())[0] < 1e-12 and pose_error(T, SE3Pose.identity())[1] < 1e-7


def test_fit_rigid_recovers_constructed_transform(rng):
    for _ in range(100):
        T = random_pose(rng, 2.0)
        src = rng.normal(size=(30, 3))
        got = fit_rigid(src, T.transform_points(src))
        dt, dr = pose_error(got, T)
        assert dt < 1e-9 and dr < 1e-9


def test_fit_rigid_matches_reference_solver(rng):
    src = rng.normal(size=(40, 3))
    dst = random_pose(rng).transform_points(src) + rng.normal(scale=0.05, size=src.shape)
    r_ref, t_ref = kabsch_reference(src, dst)
    got = fit_rigid(src, dst)
    assert np.allclose(got.rotation_matrix, r_ref, atol=1e-9)
    assert np.allclose(got.translation, t_ref, atol=1e-9)


def test_fit_rigid_with_correspondence_pairs(rng):
    src = rng.normal(size=(10, 3))
    T = random_pose(rng)
    perm = rng.permutation(10)
    dst = T.transform_points(src)[perm]
    pairs = np.column_stack([perm, np.arange(10)])
    dt, dr = pose_error(fit_rigid(src, dst, pairs), T)
    assert dt < 1e-9 and dr < 1e-9


@pytest.mark.parametrize("pts", [
    np.array([[0, 0, 0], [1, 0, 0]], float),
    np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], float),
    np.zeros((5, 3)),
])
def test_fit_rigid_degenerate(pts):
    with pytest.raises(DegenerateCorrespondences):
        fit_rigid(pts, pts)


@given(st.integers(0, 2**31 - 1))
def test_fit_rigid_rotation_is_proper(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(8, 3))
    # a reflected target tempts an improper solution
    dst = src * np.array([-1.0, 1.0, 1.0]) + rng.normal(scale=0.01, size=src.shape)
    R = fit_rigid(src, dst).rotation_matrix
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


def test_nearest_neighbors_examples():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0]], float)
    idx, dist = SpatialIndex(pts).query([[1, 0, 0], [5, 5, 5], [0, 1.9, 0]], radius=1.0)
    assert idx.tolist() == [1, -1, 2] and dist[0] == 0.0
    with pytest.raises(ValueError):
        SpatialIndex(np.zeros((0, 3)))


def test_nearest_neighbors_match_brute_force(rng):
    pts = rng.uniform(-1, 1, size=(2000, 3))
    queries = rng.uniform(-1.2, 1.2, size=(10_000, 3))
    for radius in (np.inf, 0.05):
        want, _ = brute_force_nn(pts, queries, radius)
        assert np.array_equal(nearest_neighbors(PointCloud(pts), queries, radius), want)


def test_icp_self_registration_is_identity():
    res = icp_register(PointCloud(HAND), PointCloud(HAND))
    dt, dr = pose_error(res.transform, SE3Pose.identity())
    assert dt < 1e-12 and dr < 1e-9 and res.rmse < 1e-12 and res.iterations <= 2


def test_icp_recovers_small_known_motion():
    T = SE3Pose([0.02, 0.0, 0.0], quat_from_rotvec([0, 0, np.deg2rad(10)]))
    res = icp_register(PointCloud(HAND), PointCloud(T.transform_points(HAND)), SE3Pose.identity(),
                       IcpParams(max_iters=200, converge_eps=1e-12))
    dt, dr = pose_error(res.transform, T)
    assert dt < 1e-4 and dr < 1e-3 and res.rmse < 1e-6


def test_icp_noisy_subsample(rng):
    T = SE3Pose([0.01, -0.02, 0.015], quat_from_rotvec([0.05, 0.1, -0.08]))
    for _ in range(10):
        keep = rng.random(len(HAND)) < 0.4
        target = T.transform_points(HAND)[keep] + rng.normal(scale=0.002, size=(keep.sum(), 3))
        res = icp_register(PointCloud(HAND[keep]), PointCloud(target))
        assert np.linalg.norm(res.transform.translation - T.translation) < 0.005
        assert res.inlier_fraction > 0.9


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1))
def test_icp_objective_non_increasing(seed):
    rng = np.random.default_rng(seed)
    T = random_pose(rng, 0.05)
    keep = rng.random(len(HAND)) < 0.5
    target = T.transform_points(HAND[keep]) + rng.normal(scale=0.003, size=(keep.sum(), 3))
    try:
        res = icp_register(PointCloud(HAND), PointCloud(target), params=IcpParams(corr_dist=0.05))
    except NoCorrespondences:
        return
    h = res.rmse_history
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert res.rmse >= 0 and 0 <= res.inlier_fraction <= 1


def test_icp_no_correspondences():
    far = PointCloud(HAND + np.array([5.0, 0, 0]))
    with pytest.raises(NoCorrespondences):
        icp_register(PointCloud(HAND), far, params=IcpParams(prealign_rmse=np.inf))
    with pytest.raises(NoCorrespondences):
        icp_register(PointCloud(np.zeros((0, 3))), far)


def test_point_to_plane_needs_normals_and_converges():
    with pytest.raises(ValueError):
        icp_register(PointCloud(HAND), PointCloud(HAND), params=IcpParams(method="point_to_plane"))
    g = np.mgrid[-0.1:0.1:0.01, -0.1:0.1:0.01].reshape(2, -1).T
    # a curved patch so every direction is constrained
    pts = np.column_stack([g, 2.0 * g[:, 0] ** 2 + 3.0 * g[:, 1] ** 2 + 0.5 * g[:, 0] * g[:, 1]])
    n = np.column_stack([-4.0 * g[:, 0] - 0.5 * g[:, 1], -6.0 * g[:, 1] - 0.5 * g[:, 0], np.ones(len(g))])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    T = SE3Pose([0.003, -0.002, 0.004], quat_from_rotvec([0.01, -0.02, 0.015]))
    src = PointCloud(T.inverse().transform_points(pts))
    res = icp_register(src, PointCloud(pts, n), params=IcpParams(method="point_to_plane", max_iters=100))
    dt, dr = pose_error(res.transform, T)
    assert dt < 1e-3 and dr < 1e-2
    assert all(b <= a for a, b in zip(res.rmse_history, res.rmse_history[1:]))


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud([[np.nan, 0, 0]])
    with pytest.raises(ValueError):
        PointCloud([[0, 0, 0]], normals=[[0, 0, 2.0]])


@pytest.mark.parametrize("binary", [True, False])
def test_ply_point_cloud_round_trip(tmp_path, rng, binary):
    pts = rng.normal(size=(50, 3))
    n = rng.normal(size=(50, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    path = tmp_path / "c.ply"
    write_ply(path, pts, n, binary=binary)
    got, got_n = read_point_cloud(path)
    assert np.array_equal(got, pts) and np.array_equal(got_n, n)
    assert len(PointCloud(got, got_n)) == 50
