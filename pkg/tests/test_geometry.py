import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from bimanual_aug.errors import InvalidDepth, NonPositiveDepth
from bimanual_aug.geometry import (Camera, CameraIntrinsics, SE3Pose, backproject, compose, depth_to_points,
                                   interpolate_pose, invert, look_at, matrix_to_quat, pose_error, project,
                                   quat_from_rotvec, quat_to_matrix, quat_to_rotvec, reproject_depth_image,
                                   rotation_angle, rpy_to_matrix, slerp, transform_point)
from bimanual_aug.render import render_scene
from bimanual_aug.synth import table_mesh

from strategies import poses, quaternions, random_pose, vec3

INTR = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


def oracle_matrix(pose):
    """4x4 homogeneous matrix built with scipy (scalar-last quaternions)."""
    w, x, y, z = pose.rotation
    m = np.eye(4)
    m[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    m[:3, 3] = pose.translation
    return m


# --------------------------------------------------------------------------- SE(3)

def test_identity_compose_is_noop(rng):
    p = random_pose(rng)
    q = compose(SE3Pose.identity(), p)
    assert np.allclose(q.translation, p.translation, atol=0) and np.allclose(q.rotation, p.rotation)


@given(poses())
def test_compose_with_inverse_is_identity(p):
    for c in (compose(p, invert(p)), compose(invert(p), p)):
        dt, dr = pose_error(c, SE3Pose.identity())
        assert dt < 1e-9 and dr < 1e-9
        assert abs(np.linalg.norm(c.rotation) - 1.0) < 1e-9


@given(poses(), poses())
def test_compose_matches_matrix_product(a, b):
    m = oracle_matrix(a) @ oracle_matrix(b)
    assert np.allclose(compose(a, b).as_matrix(), m, atol=1e-9)


@given(poses(), poses(), poses())
def test_compose_is_associative(a, b, c):
    dt, dr = pose_error(compose(compose(a, b), c), compose(a, compose(b, c)))
    assert dt < 1e-9 and dr < 1e-9


def test_transform_point_examples():
    assert np.allclose(transform_point(SE3Pose([1, 0, 0]), [0, 0, 0]), [1, 0, 0])
    rz = SE3Pose([0, 0, 0], quat_from_rotvec([0, 0, np.pi]))
    assert np.allclose(transform_point(rz, [1, 0, 0]), [-1, 0, 0], atol=1e-15)


def test_transform_point_matches_matrix_oracle(rng):
    for _ in range(10_000):
        p = random_pose(rng, 5.0)
        x = rng.uniform(-5, 5, 3)
        want = (oracle_matrix(p) @ np.append(x, 1.0))[:3]
        assert np.max(np.abs(transform_point(p, x) - want)) < 1e-12


@given(quaternions())
def test_quaternion_matrix_round_trip(q):
    m = quat_to_matrix(q)
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-12)
    back = matrix_to_quat(m)
    assert min(np.linalg.norm(back - q), np.linalg.norm(back + q)) < 1e-9


@given(st.tuples(*[st.floats(-1.8, 1.8)] * 3).map(np.array))
def test_rotvec_round_trip(rv):
    q = quat_from_rotvec(rv)
    assert np.allclose(Rotation.from_rotvec(rv).as_matrix(), quat_to_matrix(q), atol=1e-12)
    assert rotation_angle(q) == pytest.approx(np.linalg.norm(rv), abs=1e-12)
    assert np.allclose(quat_to_rotvec(q), rv, atol=1e-9)


def test_rpy_matches_scipy_extrinsic_xyz(rng):
    for _ in range(100):
        rpy = rng.uniform(-np.pi, np.pi, 3)
        assert np.allclose(rpy_to_matrix(rpy), Rotation.from_euler("xyz", rpy).as_matrix(), atol=1e-12)


def test_pose_list_round_trip_and_canonical_sign():
    p = SE3Pose([1, 2, 3], [-0.5, 0.5, 0.5, 0.5])
    assert p.rotation[0] > 0
    q = SE3Pose.from_list(p.to_list())
    assert np.array_equal(q.translation, p.translation) and np.array_equal(q.rotation, p.rotation)


def test_slerp_endpoints_and_midpoint():
    a = SE3Pose([0, 0, 0])
    b = SE3Pose([2, 0, 0], quat_from_rotvec([0, 0, 1.0]))
    assert pose_error(interpolate_pose(a, b, 0.0), a) == (0.0, 0.0)
    dt, dr = pose_error(interpolate_pose(a, b, 1.0), b)
    assert dt < 1e-12 and dr < 1e-12
    mid = interpolate_pose(a, b, 0.5)
    assert np.allclose(mid.translation, [1, 0, 0])
    assert rotation_angle(mid.rotation) == pytest.approx(0.5)
    assert np.allclose(slerp([1, 0, 0, 0], [1, 0, 0, 0], 0.3), [1, 0, 0, 0])


def test_poses_reject_nonfinite():
    with pytest.raises(ValueError):
        SE3Pose([np.nan, 0, 0])
    with pytest.raises(ValueError):
        SE3Pose([0, 0, 0], [0, 0, 0, 0])


# --------------------------------------------------------------------------- camera

def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 100.0, 50, 50, 100, 100)
    with pytest.raises(ValueError):
        CameraIntrinsics(100.0, 100.0, 100, 50, 100, 100)


def test_project_examples():
    assert np.allclose(project(INTR, [0, 0, 1]), [50, 50])
    assert np.allclose(project(INTR, [0.5, 0, 1]), [100, 50])
    for z in (0.0, -1.0):
        with pytest.raises(NonPositiveDepth):
            project(INTR, [0, 0, z])


def test_backproject_examples():
    assert np.allclose(backproject(INTR, [50, 50], 2.0), [0, 0, 2])
    assert np.allclose(backproject(INTR, [100, 50], 1.0), [0.5, 0, 1])
    for d in (0.0, -1.0, np.inf, np.nan):
        with pytest.raises(InvalidDepth):
            backproject(INTR, [10, 10], d)


@given(st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.05, 20)).map(np.array))
def test_backproject_inverts_project(p):
    assert np.allclose(backproject(INTR, project(INTR, p), p[2]), p, atol=1e-9)


def test_project_backproject_pixel_round_trip(rng):
    px = np.column_stack([rng.uniform(0, 100, 1000), rng.uniform(0, 100, 1000)])
    d = rng.uniform(0.1, 10, 1000)
    assert np.max(np.abs(project(INTR, backproject(INTR, px, d)) - px)) < 1e-6


def test_depth_to_points_skips_invalid():
    depth = np.zeros((100, 100))
    depth[10, 20] = 1.5
    depth[50, 50] = 2.0
    pts, vu = depth_to_points(INTR, depth)
    assert len(pts) == 2
    assert {tuple(x) for x in vu} == {(10, 20), (50, 50)}
    assert np.allclose(pts[vu[:, 0] == 50][0], [0, 0, 2.0])
    assert len(depth_to_points(INTR, depth, mask=np.zeros_like(depth, bool))[0]) == 0


def test_look_at_centres_target():
    ext = look_at([0.3, -1.0, 0.8], [0.1, 0.2, 0.0])
    pc = ext.transform_point([0.1, 0.2, 0.0])
    assert np.allclose(project(INTR, pc), [50, 50], atol=1e-9)
    with pytest.raises(ValueError):
        look_at([0, 0, 1], [0, 0, 0])


def test_camera_dict_round_trip():
    cam = Camera(INTR, look_at([0, -1, 1], [0, 0, 0]))
    back = Camera.from_dict(cam.to_dict())
    assert back.same_calibration(cam)
    assert pose_error(compose(cam.cam_to_world, cam.extrinsic), SE3Pose.identity())[0] < 1e-12


# --------------------------------------------------------------------------- reprojection

def _scene_camera():
    intr = CameraIntrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)
    return intr, Camera(intr, look_at([0.0, -0.8, 0.9], [0.0, 0.3, 0.0]))


def test_reproject_identity_is_exact():
    intr, cam = _scene_camera()
    r = render_scene([(table_mesh(), SE3Pose.identity(), 1)], cam)
    depth = r.depth.copy()
    depth[:40] = 0.0  # some invalid pixels
    rgb, d, holes = reproject_depth_image(r.rgb, depth, cam, cam)
    valid = depth > 0
    assert np.array_equal(rgb[valid], r.rgb[valid])
    assert np.array_equal(d[valid], depth[valid])
    assert np.array_equal(holes, ~valid)


def test_reproject_single_point_lands_on_projection():
    intr = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    src = Camera(intr)
    dst = Camera(intr, SE3Pose([-0.1, 0.02, 0.05], quat_from_rotvec([0.0, 0.05, 0.0])))
    depth = np.zeros((480, 640))
    rgb = np.zeros((480, 640, 3), np.uint8)
    depth[200, 300] = 1.7
    rgb[200, 300] = (10, 20, 30)
    out, d, holes = reproject_depth_image(rgb, depth, src, dst)
    p_world = backproject(intr, [300, 200], 1.7)
    uv = project(intr, dst.extrinsic.transform_point(p_world))
    u, v = np.floor(uv + 0.5).astype(int)
    assert (~holes).sum() == 1 and not holes[v, u]
    assert tuple(out[v, u]) == (10, 20, 30)
    assert d[v, u] == pytest.approx(dst.extrinsic.transform_point(p_world)[2])


def test_reproject_z_buffer_keeps_nearest():
    intr = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    cam = Camera(intr)
    depth = np.zeros((480, 640))
    rgb = np.zeros((480, 640, 3), np.uint8)
    # two pixels on the same ray from a camera shifted along the optical axis
    depth[240, 320], rgb[240, 320] = 2.0, (255, 0, 0)
    depth[240, 321], rgb[240, 321] = 1.0, (0, 255, 0)
    dst = Camera(intr, SE3Pose([0, 0, 0.0]))
    out, d, _ = reproject_depth_image(rgb, depth, cam, dst)
    assert tuple(out[240, 321]) == (0, 255, 0) and tuple(out[240, 320]) == (255, 0, 0)
    # a destination looking along x sees both points; collapse them onto one pixel
    pts = np.array([[0, 0, 2.0], [0, 0, 1.0]])
    from bimanual_aug import _kernels
    c, dd, f = _kernels.splat(pts, np.array([[255, 0, 0], [0, 255, 0]], float), 500, 500, 320, 240, 480, 640)
    assert tuple(c[240, 320]) == (0, 255, 0) and dd[240, 320] == 1.0


def test_reproject_empty_depth_is_all_holes():
    intr, cam = _scene_camera()
    rgb, d, holes = reproject_depth_image(np.zeros((480, 640, 3), np.uint8), np.zeros((480, 640)), cam, cam)
    assert holes.all() and not d.any()


def test_reproject_plane_matches_direct_render():
    intr, src = _scene_camera()
    dst = Camera(intr, look_at([0.04, -0.85, 0.92], [0.02, 0.3, 0.0]))
    scene = [(table_mesh(), SE3Pose.identity(), 1)]
    a = render_scene(scene, src)
    b = render_scene(scene, dst)
    rgb, d, holes = reproject_depth_image(a.rgb, a.depth, src, dst)
    valid = (b.depth > 0) & ~holes
    assert valid.mean() > 0.8
    diff = np.abs(rgb.astype(int) - b.rgb.astype(int)).max(axis=-1)
    assert (diff[valid] <= 1).mean() >= 0.95


@given(poses())
def test_pose_json_round_trip_is_bit_exact(p):
    back = SE3Pose.from_list(json.loads(json.dumps(p.to_list())))
    assert back.to_list() == p.to_list()
