import json
import xml.etree.ElementTree as ET

import pytest

from bimanual_aug import __version__
from bimanual_aug.cli import EXIT_INVALID, EXIT_OK, EXIT_USAGE, dataset_stats, main
from bimanual_aug.dataset import load_augmented, load_manifest

from conftest import copy_tree

# grasp frame pointing down at the table
DOWN = [0.0, 1.0, 0.0, 0.0]


def write_script(path, **kw):
    d = {"seed": 5, "num_frames": 4, "num_episodes": 2}
    d.update(kw)
    path.write_text(json.dumps(d))
    return path


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["retarget", "--in", "x"])
    assert exc.value.code == EXIT_USAGE


def test_synth_missing_script(tmp_path, capsys):
    assert main(["synth", "--script", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "none.json" in capsys.readouterr().err


def test_synth_then_validate(tmp_path, capsys):
    script = write_script(tmp_path / "s.json")
    assert main(["synth", "--script", str(script), "--out", str(tmp_path / "d")]) == EXIT_OK
    assert main(["validate", "--in", str(tmp_path / "d")]) == EXIT_OK
    assert "ok: bimanual_aug/source with 2 demos, 8 frames" in capsys.readouterr().out


def test_validate_corrupted_frame(small_source, tmp_path, capsys):
    root = copy_tree(small_source, tmp_path / "d")
    path = root / "demo_001" / "frames.jsonl"
    lines = path.read_text().splitlines()
    lines[4] = lines[4][: len(lines[4]) // 2]
    path.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--in", str(root)]) == EXIT_INVALID
    assert "demo_001/frames.jsonl:5" in capsys.readouterr().err


def test_validate_missing_image(small_source, tmp_path, capsys):
    root = copy_tree(small_source, tmp_path / "d")
    (root / "demo_000" / "cam_fixed" / "rgb_000002.png").unlink()
    assert main(["validate", "--in", str(root)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "rgb_000002.png" in err and "frame 2" in err


def test_validate_unknown_format(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other", "demos": []}))
    assert main(["validate", "--in", str(tmp_path)]) == EXIT_INVALID


def test_retarget_missing_depth(small_source, tmp_path, capsys):
    root = copy_tree(small_source, tmp_path / "d")
    (root / "demo_000" / "cam_fixed" / "depth_000003.png").unlink()
    code = main(["retarget", "--in", str(root), "--out", str(tmp_path / "r"), "--jobs", "1"])
    assert code == EXIT_USAGE
    assert "BackgroundMissing" in capsys.readouterr().err


def test_retarget_missing_plate(small_source, tmp_path, capsys):
    root = copy_tree(small_source, tmp_path / "d")
    (root / "cam_fixed" / "plate_depth.png").unlink()
    code = main(["retarget", "--in", str(root), "--out", str(tmp_path / "r"), "--jobs", "1"])
    assert code == EXIT_USAGE
    assert "BackgroundMissing" in capsys.readouterr().err


def test_json_logs(small_source, tmp_path, capsys):
    code = main(["--log-json", "retarget", "--in", str(small_source), "--out", str(tmp_path / "r"),
                 "--jobs", "2", "--set", "retarget.refine=false"])
    assert code == EXIT_OK
    events = [json.loads(line) for line in capsys.readouterr().err.splitlines() if line.strip()]
    done = [e for e in events if e["event"] == "retarget_done"]
    assert done and done[0]["low_fidelity"] == 0


def test_stats_balance_and_recount(small_pipeline, capsys):
    for key in ("src", "aug"):
        root = small_pipeline[key]
        capsys.readouterr()
        assert main(["stats", "--in", str(root)]) == EXIT_OK
        st = json.loads(capsys.readouterr().out)
        assert st["split"] == {"pick_place": "1/1"}
        assert st["balance"]["balanced"]
        # recount straight from the files on disk
        demo_dirs = sorted(p.parent for p in root.glob("*/frames.jsonl"))
        lines = sum(len([l for l in (d / "frames.jsonl").read_text().splitlines() if l.strip()])
                    for d in demo_dirs)
        assert st["demos"] == len(demo_dirs) == len(load_manifest(root)["demos"])
        assert st["frames"] == lines
        assert st["tasks"]["pick_place"] == {"demos": len(demo_dirs), "frames": lines}


def test_stats_fidelity_histograms(small_pipeline):
    st = dataset_stats(small_pipeline["aug"])
    cp = st["fidelity"]["crosspaint"]
    n = sum(len(d.frames) for d in load_augmented(small_pipeline["aug"]))
    hist = cp["ee_centroid_error_px"]
    assert hist["n"] == 2 * n
    assert sum(hist["bins"].values()) == hist["n"]
    ret = dataset_stats(small_pipeline["ret"])["fidelity"]["retarget"]
    assert ret["low_fidelity_frames"] == 0


def test_stats_svg(small_pipeline, tmp_path):
    out = tmp_path / "svg"
    assert main(["stats", "--in", str(small_pipeline["aug"]), "--svg", str(out)]) == EXIT_OK
    files = sorted(out.glob("*.svg"))
    assert len(files) == 2
    for f in files:
        root = ET.fromstring(f.read_text())
        assert root.tag.endswith("svg")
        assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2


def test_crosspaint_unreachable_frames_dropped(tmp_path):
    n = 6
    script = write_script(tmp_path / "s.json", num_frames=n, num_episodes=1,
                          hand_path=[{"frame": 0, "pose": [0.25, 0.3, 0.2] + DOWN},
                                     {"frame": n - 1, "pose": [2.5, 0.3, 0.2] + DOWN}])
    src, ret, aug = tmp_path / "src", tmp_path / "ret", tmp_path / "aug"
    assert main(["synth", "--script", str(script), "--out", str(src)]) == EXIT_OK
    assert main(["retarget", "--in", str(src), "--out", str(ret), "--jobs", "1",
                 "--set", "retarget.refine=false"]) == EXIT_OK
    assert main(["crosspaint", "--in", str(ret), "--target-robot", "ur5e_bimanual", "--out", str(aug),
                 "--jobs", "1"]) == EXIT_OK
    m = load_manifest(aug)
    dropped = m["demos"][0]["dropped_frames"]
    assert 0 < len(dropped) < n
    assert n - 1 in dropped and 0 not in dropped
    assert m["total_dropped_frames"] == len(dropped)
    assert [f.index for f in load_augmented(aug)[0].frames] == [i for i in range(n) if i not in dropped]
    assert main(["validate", "--in", str(aug)]) == EXIT_OK


def test_crosspaint_output_is_valid(small_pipeline, capsys):
    assert main(["validate", "--in", str(small_pipeline["aug"])]) == EXIT_OK
    assert "bimanual_aug/augmented" in capsys.readouterr().out
    run = load_manifest(small_pipeline["aug"])["run"]
    assert {"config_hash", "tool_version", "inputs"} <= set(run)
