import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bimanual_aug.errors import CycleError, MissingJointValue, NoConvergence, ParseError, UnsupportedElement
from bimanual_aug.geometry import SE3Pose, compose, pose_error
from bimanual_aug.kinematics import (GripperMap, IkParams, forward_kinematics, gripper_width_to_joints, ik_residual,
                                     jacobian, link_pose, load_urdf, parse_urdf, solve_ik, solve_ik_detailed)
from bimanual_aug.robots import DATA_DIR, load_robot_config

from oracles import MatrixChainFK

PLANAR_2R = """
<robot name="planar">
  <link name="base"/><link name="l1"/><link name="l2"/><link name="tip"/>
  <joint name="j1" type="revolute"><parent link="base"/><child link="l1"/>
    <axis xyz="0 0 1"/><limit lower="-3.2" upper="3.2"/></joint>
  <joint name="j2" type="revolute"><parent link="l1"/><child link="l2"/>
    <origin xyz="1 0 0"/><axis xyz="0 0 1"/><limit lower="-3.2" upper="3.2"/></joint>
  <joint name="tip_joint" type="fixed"><parent link="l2"/><child link="tip"/><origin xyz="1 0 0"/></joint>
</robot>"""

UR_PATH = DATA_DIR / "ur5e_arm.urdf"


@pytest.fixture(scope="module")
def ur():
    return load_urdf(UR_PATH, ee_link="flange")


@pytest.fixture(scope="module")
def ur_oracle():
    return MatrixChainFK(UR_PATH.read_text())


def test_parse_two_link_fixture():
    ch = parse_urdf("""<robot name="r"><link name="a"/><link name="b"/>
        <joint name="j" type="revolute"><parent link="a"/><child link="b"/>
        <axis xyz="0 0 1"/><limit lower="-1" upper="1"/></joint></robot>""")
    assert len(ch.links) == 2 and len(ch.joints) == 1
    assert np.allclose(ch.joint("j").axis, [0, 0, 1])
    assert ch.root == "a" and ch.ee_link == "b"


def test_parse_visuals_and_materials():
    ch = parse_urdf("""<robot name="r"><material name="red"><color rgba="1 0 0 1"/></material>
        <link name="a"><visual><origin xyz="0 0 0.1"/><geometry><box size="0.1 0.2 0.3"/></geometry>
        <material name="red"/></visual>
        <visual><geometry><mesh filename="m.ply" scale="2 2 2"/></geometry></visual></link></robot>""")
    v = ch.links["a"].visuals
    assert v[0].kind == "box" and v[0].params["size"] == [0.1, 0.2, 0.3] and v[0].rgba == (1, 0, 0, 1)
    assert np.allclose(v[0].origin.translation, [0, 0, 0.1])
    assert v[1].kind == "mesh" and v[1].params["filename"] == "m.ply"


@pytest.mark.parametrize("text, err", [
    ("<robot><link name='a'>", ParseError),
    ("<robot><link name='a'/><joint name='j' type='fixed'><parent link='a'/><child link='zz'/></joint></robot>",
     ParseError),
    ("<robot><link name='a'/><link name='b'/><joint name='j' type='floating'><parent link='a'/>"
     "<child link='b'/></joint></robot>", UnsupportedElement),
    ("<robot><link name='a'/><link name='b'/>"
     "<joint name='j1' type='fixed'><parent link='a'/><child link='b'/></joint>"
     "<joint name='j2' type='fixed'><parent link='b'/><child link='a'/></joint></robot>", CycleError),
    ("<robot><link name='a'/><link name='b'/><joint name='j' type='revolute'><parent link='a'/>"
     "<child link='b'/><limit lower='1' upper='-1'/></joint></robot>", ParseError),
    ("<robot><link name='a'><visual><geometry><capsule radius='1'/></geometry></visual></link></robot>",
     UnsupportedElement),
])
def test_parse_errors(text, err):
    with pytest.raises(err):
        parse_urdf(text)


def test_continuous_joint_becomes_bounded_revolute():
    ch = parse_urdf("""<robot name="r"><link name="a"/><link name="b"/>
        <joint name="j" type="continuous"><parent link="a"/><child link="b"/><axis xyz="0 0 2"/></joint></robot>""")
    j = ch.joint("j")
    assert j.type == "revolute" and j.limits == (-2 * np.pi, 2 * np.pi)
    assert np.linalg.norm(j.axis) == pytest.approx(1.0, abs=1e-12)


def test_planar_fk_analytic():
    ch = parse_urdf(PLANAR_2R)
    assert np.allclose(link_pose(ch, {"j1": 0, "j2": 0}, "tip").translation, [2, 0, 0])
    assert np.allclose(link_pose(ch, {"j1": np.pi / 2, "j2": 0}, "tip").translation, [0, 2, 0], atol=1e-9)
    with pytest.raises(MissingJointValue):
        forward_kinematics(ch, {"j1": 0.0})


def test_planar_jacobian_analytic():
    ch = parse_urdf(PLANAR_2R)
    J = jacobian(ch, {"j1": 0, "j2": 0}, "tip")
    assert J.shape == (6, 2)  # fixed tip joint contributes no column
    assert J[1, 0] == pytest.approx(2.0) and J[1, 1] == pytest.approx(1.0)
    assert np.allclose(J[5], [1, 1])


def test_ur_fixture_structure_and_zero_pose(ur, ur_oracle):
    assert len(ur.movable_joints) == 6
    q0 = {n: 0.0 for n in ur.joint_names}
    poses = forward_kinematics(ur, q0)
    for link in ur.links:
        assert np.allclose(poses[link].as_matrix(), ur_oracle.link_matrix(link, q0), atol=1e-12)


def test_fk_matches_matrix_chain_oracle(ur, ur_oracle, rng):
    for _ in range(200):
        q = ur.random_config(rng)
        got = link_pose(ur, q).as_matrix()
        assert np.max(np.abs(got - ur_oracle.link_matrix("flange", q))) < 1e-10


def test_fk_splits_through_intermediate_link(ur, rng):
    q = ur.random_config(rng)
    base = SE3Pose([0.3, -0.2, 0.1], [0.9, 0.1, 0.2, 0.3])
    full = forward_kinematics(ur, q, base)
    mid = link_pose(ur, q, "upper_arm_link", base)
    # the remaining sub-chain expressed relative to the intermediate link
    rel = compose(link_pose(ur, q, "upper_arm_link").inverse(), link_pose(ur, q, "flange"))
    dt, dr = pose_error(compose(mid, rel), full["flange"])
    assert dt < 1e-12 and dr < 1e-12


def test_jacobian_matches_finite_differences(ur, rng):
    h = 1e-6
    for _ in range(100):
        q = ur.random_config(rng)
        J = jacobian(ur, q)
        names = ur.active_joint_names()
        base = link_pose(ur, q)
        for k, n in enumerate(names):
            qp, qm = dict(q), dict(q)
            qp[n] += h
            qm[n] -= h
            tp, tm = link_pose(ur, qp), link_pose(ur, qm)
            dpos = (tp.translation - tm.translation) / (2 * h)
            rp, rm = tp.rotation_matrix, tm.rotation_matrix
            dR = (rp - rm) / (2 * h) @ base.rotation_matrix.T
            omega = np.array([dR[2, 1], dR[0, 2], dR[1, 0]])
            assert np.max(np.abs(dpos - J[:3, k])) < 1e-6
            assert np.max(np.abs(omega - J[3:, k])) < 1e-6


def test_ik_fixed_point_returns_seed(ur, rng):
    q = ur.random_config(rng)
    res = solve_ik_detailed(ur, link_pose(ur, q), q)
    assert res.iterations == 0
    assert all(res.q[n] == q[n] for n in q)


def test_ik_recovers_perturbed_targets(ur, rng):
    params = IkParams()
    for _ in range(50):
        q = ur.random_config(rng)
        target = link_pose(ur, q)
        seed = ur.clamp({n: v + rng.normal(scale=0.1) for n, v in q.items()})
        sol = solve_ik(ur, target, seed, params)
        pe, re = ik_residual(ur, sol, target)
        assert pe <= params.pos_tol and re <= params.rot_tol
        assert ur.within_limits(sol)


def test_ik_unreachable_raises_with_monotone_history(ur):
    seed = {n: 0.1 for n in ur.joint_names}
    with pytest.raises(NoConvergence) as exc:
        solve_ik(ur, SE3Pose([10.0, 0, 0]), seed, IkParams(max_iters=100))
    hist = exc.value.error_history
    assert len(hist) == 101 and all(b <= a for a, b in zip(hist, hist[1:]))
    assert exc.value.best_q is not None and ur.within_limits(exc.value.best_q)
    assert exc.value.best_error == pytest.approx(hist[-1])


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_ik_output_always_within_limits(seed):
    rng = np.random.default_rng(seed)
    ch = load_urdf(UR_PATH, ee_link="flange")
    target = SE3Pose(rng.uniform(-1.2, 1.2, 3), rng.normal(size=4))
    q0 = ch.random_config(rng)
    try:
        q = solve_ik(ch, target, q0, IkParams(max_iters=30))
    except NoConvergence as exc:
        q = exc.best_q
    assert ch.within_limits(q)


def test_ik_missing_seed_joint(ur):
    with pytest.raises(MissingJointValue):
        solve_ik(ur, SE3Pose(), {"shoulder_pan_joint": 0.0})


def test_gripper_width_mapping():
    robot = load_robot_config("ur5e_bimanual")
    ch, g = robot.chain, robot.gripper
    closed = gripper_width_to_joints(ch, 0.0, g)
    opened = gripper_width_to_joints(ch, g.max_width, g)
    for n in g.joints:
        assert closed[n] == ch.joint(n).limits[0]
        assert opened[n] == pytest.approx(ch.joint(n).limits[1])
    assert gripper_width_to_joints(ch, 5.0, g) == opened
    half = gripper_width_to_joints(ch, g.max_width / 2, g)
    q = {**robot.home, **half}
    poses = forward_kinematics(ch, q)
    sep = np.linalg.norm(poses["finger_1"].translation - poses["finger_2"].translation)
    assert sep == pytest.approx(g.max_width / 2, rel=0.02)


def test_gripper_map_validation():
    with pytest.raises(ValueError):
        GripperMap.from_dict({"joints": ["a", "b"], "scale": [1.0], "max_width": 0.1})
