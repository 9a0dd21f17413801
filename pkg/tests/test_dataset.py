import json

import numpy as np
import pytest
from hypothesis import given

from bimanual_aug.dataset import (AUGMENTED_FORMAT, BimanualDemo, Demonstration, HandState, RobotState,
                                  TrajectoryFrame, align_frames, canonical_json, check_balance, export_augmented,
                                  load_augmented, load_dataset, load_manifest, mix_bimanual, provenance_ok,
                                  side_counts, write_demo, write_manifest)
from bimanual_aug.errors import ManifestError, MissingAction, SchemaError
from bimanual_aug.geometry import SE3Pose, compose
from bimanual_aug.hand_retarget import CLOSED, HUMAN, OPEN, ROBOT, EndEffectorAction, HandKeypoints

from strategies import poses, random_pose


def make_frame(k, rng, with_human=True):
    robot_pose = random_pose(rng, 1.0)
    hand_pose = random_pose(rng, 1.0)
    return TrajectoryFrame(
        index=k,
        timestamp=0.1 * k,
        observations={"fixed": {"rgb": f"cam_fixed/rgb_{k:06d}.png", "depth": f"cam_fixed/depth_{k:06d}.png"}},
        robot_state=RobotState(robot_pose, 0.04),
        robot_joints={"j1": float(rng.normal()), "j2": float(rng.normal())},
        hand_state=HandState(HandKeypoints(rng.normal(0, 0.05, (21, 3)), "right")),
        robot_action=EndEffectorAction(robot_pose, OPEN if k % 2 else CLOSED, ROBOT, 0.08 if k % 2 else 0.0),
        human_action=EndEffectorAction(hand_pose, CLOSED, HUMAN) if with_human else None,
    )


def make_demo(demo_id, side, rng, n=5, task="pick_place"):
    return Demonstration(demo_id, task, side, [make_frame(k, rng) for k in range(n)])


def write_source(root, demos, task="pick_place"):
    for d in demos:
        write_demo(root, d)
    write_manifest(root, {"format": "bimanual_aug/source", "version": 1, "task": task,
                          "demos": [d.index_entry() for d in demos]})


def assert_demo_equal(a, b):
    assert (a.id, a.task, a.robot_side, a.success) == (b.id, b.task, b.robot_side, b.success)
    assert [canonical_json(f.to_dict()) for f in a.frames] == [canonical_json(f.to_dict()) for f in b.frames]


# --------------------------------------------------------------------------- loading

def test_empty_manifest(tmp_path):
    write_manifest(tmp_path, {"format": "bimanual_aug/source", "demos": []})
    assert load_dataset(tmp_path) == []


def test_two_demos_round_trip(tmp_path, rng):
    demos = [make_demo("a", "left", rng), make_demo("b", "right", rng)]
    write_source(tmp_path, demos)
    back = load_dataset(tmp_path)
    assert [d.robot_side for d in back] == ["left", "right"]
    for a, b in zip(demos, back):
        assert_demo_equal(a, b)
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.robot_state.pose.to_list(), fb.robot_state.pose.to_list())
            np.testing.assert_array_equal(fa.hand_state.keypoints.landmarks, fb.hand_state.keypoints.landmarks)


def test_non_increasing_timestamp_names_frame(tmp_path, rng):
    d = make_demo("a", "left", rng)
    d.frames[3].timestamp = d.frames[2].timestamp
    write_source(tmp_path, [d])
    with pytest.raises(SchemaError) as exc:
        load_dataset(tmp_path)
    assert "frame 3" in str(exc.value)
    assert "a/frames.jsonl" in str(exc.value)


def test_corrupt_record_names_line(tmp_path, rng):
    write_source(tmp_path, [make_demo("a", "left", rng)])
    path = tmp_path / "a" / "frames.jsonl"
    lines = path.read_text().splitlines()
    lines[1] = lines[1].replace('"robot_state"', '"robot_stat"')
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError) as exc:
        load_dataset(tmp_path)
    assert "a/frames.jsonl:2" in str(exc.value)


def test_camera_set_must_match(tmp_path, rng):
    d = make_demo("a", "left", rng)
    d.frames[2].observations = {"wrist": {"rgb": "x.png"}}
    write_source(tmp_path, [d])
    with pytest.raises(SchemaError, match="camera set"):
        load_dataset(tmp_path)


def test_bad_provenance_rejected(tmp_path, rng):
    d = make_demo("a", "left", rng)
    d.frames[0].robot_action = EndEffectorAction(SE3Pose.identity(), OPEN, HUMAN)
    write_source(tmp_path, [d])
    with pytest.raises(SchemaError, match="provenance"):
        load_dataset(tmp_path)


def test_manifest_errors(tmp_path, rng):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path)
    write_manifest(tmp_path, {"format": AUGMENTED_FORMAT, "demos": []})
    with pytest.raises(ManifestError):
        load_dataset(tmp_path)
    write_manifest(tmp_path, {"demos": [{"id": "x", "robot_side": "middle"}]})
    with pytest.raises(SchemaError, match="robot_side"):
        load_dataset(tmp_path)
    write_manifest(tmp_path, {"demos": [{"id": "x", "robot_side": "left"}]})
    with pytest.raises(SchemaError, match="frames.jsonl missing"):
        load_dataset(tmp_path)


# --------------------------------------------------------------------------- alignment

def test_align_identity(rng):
    d = make_demo("a", "left", rng)
    assert_demo_equal(align_frames(d, SE3Pose.identity()), d)


def test_align_translation(rng):
    d = make_demo("a", "left", rng)
    t = np.array([0.3, -0.2, 0.1])
    out = align_frames(d, SE3Pose(t))
    for a, b in zip(d.frames, out.frames):
        np.testing.assert_allclose(b.robot_state.pose.translation, a.robot_state.pose.translation + t, atol=1e-15)
        np.testing.assert_allclose(b.human_action.pose.translation, a.human_action.pose.translation + t,
                                   atol=1e-15)
        np.testing.assert_array_equal(b.robot_state.pose.rotation, a.robot_state.pose.rotation)
        assert b.observations == a.observations
        np.testing.assert_array_equal(b.hand_state.keypoints.landmarks, a.hand_state.keypoints.landmarks)


def _max_pose_gap(a, b):
    gap = 0.0
    for fa, fb in zip(a.frames, b.frames):
        for pa, pb in ((fa.robot_state.pose, fb.robot_state.pose), (fa.robot_action.pose, fb.robot_action.pose),
                       (fa.human_action.pose, fb.human_action.pose)):
            gap = max(gap, np.abs(pa.as_matrix() - pb.as_matrix()).max())
    return gap


@given(poses(max_t=2.0))
def test_align_round_trip(T):
    d = make_demo("a", "left", np.random.default_rng(0))
    assert _max_pose_gap(align_frames(align_frames(d, T), T.inverse()), d) < 1e-9


@given(poses(max_t=2.0), poses(max_t=2.0))
def test_align_group_action(T1, T2):
    d = make_demo("a", "left", np.random.default_rng(1))
    assert _max_pose_gap(align_frames(align_frames(d, T1), T2), align_frames(d, compose(T2, T1))) < 1e-9


# --------------------------------------------------------------------------- balance

def _stub(side, task="pick_place"):
    return Demonstration(f"{side}", task, side, [])


def test_balance_paper_convention():
    demos = [_stub("left") for _ in range(100)] + [_stub("right") for _ in range(100)]
    rep = check_balance(demos)
    assert rep.balanced and not rep.warnings
    assert rep.counts == {"pick_place": {"left": 100, "right": 100}}


def test_balance_empty_warns():
    rep = check_balance([])
    assert rep.balanced
    assert rep.warnings


def test_balance_flags_imbalance():
    rep = check_balance([_stub("left")] * 3 + [_stub("right")])
    assert not rep.balanced
    assert rep.imbalanced == ["pick_place"]
    assert rep.counts["pick_place"] == {"left": 3, "right": 1}


def test_balance_per_task():
    demos = [_stub("left", "a"), _stub("right", "a"), _stub("left", "b")]
    rep = check_balance(demos)
    assert rep.imbalanced == ["b"]


# --------------------------------------------------------------------------- mixing and export

@pytest.mark.parametrize("side", ["left", "right"])
def test_mix_assigns_robot_side(side, rng):
    d = make_demo("a", side, rng)
    frames, dropped = mix_bimanual(d)
    assert dropped == [] and len(frames) == len(d.frames)
    for fr, src in zip(frames, d.frames):
        robot_act, human_act = (fr.left_action, fr.right_action) if side == "left" else (fr.right_action,
                                                                                           fr.left_action)
        assert robot_act.provenance == ROBOT and human_act.provenance == HUMAN
        assert robot_act is src.robot_action and human_act is src.human_action
        assert provenance_ok(fr)


def test_mix_balanced_set_counts(rng):
    demos = [make_demo(f"d{k}", "left" if k % 2 else "right", rng, n=2) for k in range(20)]
    robot_sides = []
    for d in demos:
        frames, _ = mix_bimanual(d)
        sides = {"left" if f.left_action.provenance == ROBOT else "right" for f in frames}
        assert len(sides) == 1
        robot_sides.append(sides.pop())
    assert robot_sides.count("left") == robot_sides.count("right") == 10
    assert side_counts(demos) == {"left": 10, "right": 10}


def test_mix_drops_low_fidelity(rng):
    d = make_demo("a", "left", rng)
    d.frames[1].low_fidelity = True
    d.frames[2].hand_state.low_fidelity = True
    frames, dropped = mix_bimanual(d, flagged=[4])
    assert dropped == [1, 2, 4]
    assert [f.index for f in frames] == [0, 3]
    kept, none_dropped = mix_bimanual(d, drop_low_fidelity=False, flagged=[4])
    assert none_dropped == [] and len(kept) == 5
    assert kept[1].fidelity["low_fidelity"] is True


def test_mix_missing_action(rng):
    d = make_demo("a", "left", rng)
    d.frames[2].human_action = None
    with pytest.raises(MissingAction):
        mix_bimanual(d)


def test_export_round_trip_bit_exact(tmp_path, rng):
    demos = []
    for k, side in enumerate(["left", "right", "left"]):
        d = make_demo(f"s{k}", side, rng, n=6)
        d.frames[2].low_fidelity = True
        frames, dropped = mix_bimanual(d, fidelity={i: {"ik": {"left": {"pos_error": 1e-5 * i}}} for i in range(6)})
        demos.append(BimanualDemo(f"aug_{k}", d.task, frames, d.id, side, True, dropped))
    m = export_augmented(tmp_path, demos, {"task": "pick_place", "config_hash": "abc"})
    assert m["total_dropped_frames"] == 3
    assert [e["drop_count"] for e in m["demos"]] == [1, 1, 1]
    back = load_augmented(tmp_path)
    for a, b in zip(demos, back):
        assert (a.id, a.source_demo_id, a.robot_side, a.dropped_frames) == (
            b.id, b.source_demo_id, b.robot_side, b.dropped_frames)
        assert [f.to_dict() for f in a.frames] == [f.to_dict() for f in b.frames]
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.left_action.pose.to_list(), fb.left_action.pose.to_list())
            np.testing.assert_array_equal(fa.right_action.pose.to_list(), fb.right_action.pose.to_list())
    assert not (tmp_path / "manifest.json.tmp").exists()


def test_export_rejects_bad_provenance(tmp_path, rng):
    frames, _ = mix_bimanual(make_demo("a", "left", rng))
    with pytest.raises(SchemaError):
        export_augmented(tmp_path, [BimanualDemo("x", "t", frames)], {}, provenance_mode="robot_only")


def test_load_augmented_checks_provenance(tmp_path, rng):
    frames, _ = mix_bimanual(make_demo("a", "left", rng))
    export_augmented(tmp_path, [BimanualDemo("x", "t", frames)], {})
    path = tmp_path / "x" / "frames.jsonl"
    path.write_text(path.read_text().replace('"human_retargeted"', '"robot"'))
    with pytest.raises(SchemaError, match="provenance"):
        load_augmented(tmp_path)


def test_canonical_json_is_stable():
    a = canonical_json({"b": [0.1, 1e-17], "a": {"y": 1, "x": 2}})
    assert a == '{"a":{"x":2,"y":1},"b":[0.1,1e-17]}'
    assert json.loads(a) == {"b": [0.1, 1e-17], "a": {"y": 1, "x": 2}}
    with pytest.raises(ValueError):
        canonical_json({"x": float("nan")})
