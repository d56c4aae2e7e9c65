import json
import os

import numpy as np
import pytest

from splat_autolabel.cli.main import dispatch

SPEC = {
    "frames": 8,
    "static_blobs": 4,
    "moving_blobs": 1,
    "gaussians_per_blob": 3,
    "width": 24,
    "height": 16,
    "focal": 20.0,
    "curvature": 0.05,
}

CONFIG = {
    "version": 1,
    "sections": {
        "scene": {
            "state_dim": 4,
            "opacity_logits_dim": 4,
            "images_per_group": 4,
            "valid_distance": 1e6,
            "warm_up": 1,
            "densify_from": 2,
            "densify_until": 4,
            "densification_interval": 2,
            "opacity_reset_interval": 3,
        },
        "render": {"tile_size": 8, "threads": 1},
        "model": {"position_bands": 2, "time_bands": 2, "deform_width": 8, "deform_depth": 2, "dem_width": 8, "oem_width": 8},
        "train": {"iterations": 4, "test_every": 4},
        "adaptor": {"width": 16, "depth": 2, "following": 3, "epochs": 3, "batch": 4},
    },
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC))
    (root / "config.json").write_text(json.dumps(CONFIG))
    assert run(root, "synth", "--spec", root / "spec.json", "--out", root / "scene") == 0
    assert run(root, "train", "--scene", root / "scene", "--out", root / "train") == 0
    assert run(root, "train-adaptor", "--scene", root / "scene", "--out", root / "adaptor", "--holdout-every", 4) == 0
    return root


def run(root, command, *args):
    return dispatch([command, "--config", str(root / "config.json"), "-q", *(str(a) for a in args)])


def read_json(path):
    with open(path) as f:
        return json.load(f)


def output_hashes(directory):
    return read_json(os.path.join(directory, "manifest.json"))["outputs"]


def test_usage_errors_exit_with_status_2(tmp_path, capsys):
    assert dispatch([]) == 2
    assert dispatch(["frobnicate"]) == 2
    assert dispatch(["train"]) == 2
    assert "train requires --scene, --out" in capsys.readouterr().err
    assert dispatch(["train-adaptor", "--out", str(tmp_path), "--w", "1,2"]) == 2
    assert dispatch(["transform-pose", "--pose", *"1 0 0 0 0 1 0 0 0 0 1 0".split()]) == 2
    assert dispatch(["label", "--scene", "s", "--adaptor", "a", "--out", str(tmp_path)]) == 2
    assert dispatch(["train", "-v", "-q"]) == 2


def test_version():
    assert dispatch(["--version"]) == 0


def test_print_config_layers_presets_and_flags(capsys):
    assert dispatch(["train", "--preset", "kitti", "--iterations", "7", "--no-dem", "--print-config"]) == 0
    sections = json.loads(capsys.readouterr().out)["sections"]
    assert sections["train"]["iterations"] == 7
    assert sections["train"]["test_every"] == 10
    assert sections["scene"]["warm_up"] == 3000
    assert sections["model"]["use_dem"] is False
    assert sections["model"]["use_oem"] is True


def test_bad_config_files_fail(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"version": 1, "sections": {"colours": {}}}))
    assert dispatch(["train", "--config", str(path), "--print-config"]) == 1
    path.write_text(json.dumps({"version": 1, "sections": {"train": {"iterations": -1}}}))
    assert dispatch(["train", "--config", str(path), "--print-config"]) == 1


def test_missing_inputs_fail_with_status_1(tmp_path, capsys):
    assert dispatch(["train", "--scene", str(tmp_path / "nowhere"), "--out", str(tmp_path / "out"), "-q"]) == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_synth_writes_a_scene_with_a_manifest(workspace):
    scene = workspace / "scene"
    for name in ("cameras.txt", "images.txt", "points3D.txt", "pairs.json", "anns.json", "truth.json"):
        assert (scene / name).exists()
    assert len(list((scene / "images").iterdir())) == 8
    manifest = read_json(scene / "manifest.json")
    assert manifest["command"] == "synth"
    assert manifest["spec"]["curvature"] == 0.05
    assert set(manifest["outputs"]) >= {"cameras.txt", "images/frame_0000.ppm", "truth.json"}


def test_synth_is_reproducible(workspace, tmp_path):
    assert run(workspace, "synth", "--spec", workspace / "spec.json", "--out", tmp_path / "again") == 0
    assert output_hashes(tmp_path / "again") == output_hashes(workspace / "scene")
    assert run(workspace, "synth", "--spec", workspace / "spec.json", "--seed", 9, "--out", tmp_path / "other") == 0
    assert output_hashes(tmp_path / "other") != output_hashes(workspace / "scene")


def test_train_outputs(workspace):
    out = workspace / "train"
    lines = (out / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 4
    evaluation = read_json(out / "eval.json")
    assert set(evaluation) == {"held_out", "train", "primitives", "iterations"}
    assert evaluation["iterations"] == 4
    assert (out / "renderer" / "config.json").exists()
    assert read_json(out / "manifest.json")["config"]["sections"]["train"]["iterations"] == 4


def test_train_is_reproducible(workspace, tmp_path):
    assert run(workspace, "train", "--scene", workspace / "scene", "--out", tmp_path / "again") == 0
    assert output_hashes(tmp_path / "again") == output_hashes(workspace / "train")


def test_render_and_metrics(workspace, tmp_path, capsys):
    renderer = workspace / "train" / "renderer"
    assert run(workspace, "render", "--scene", workspace / "scene", "--renderer", renderer, "--out", tmp_path / "r", "--views", "test") == 0
    names = sorted(os.listdir(tmp_path / "r" / "images"))
    assert names == ["frame_0000.ppm", "frame_0004.ppm"]
    capsys.readouterr()

    assert run(workspace, "metrics", "--a", tmp_path / "r" / "images", "--b", tmp_path / "r" / "images") == 0
    same = json.loads(capsys.readouterr().out)
    assert same["psnr"] == 100.0
    assert [v["name"] for v in same["views"]] == names

    a = tmp_path / "r" / "images" / "frame_0000.ppm"
    b = workspace / "scene" / "images" / "frame_0000.ppm"
    assert run(workspace, "metrics", "--a", a, "--b", b, "--out", tmp_path / "m") == 0
    single = json.loads(capsys.readouterr().out)
    assert 0.0 < single["psnr"] < 100.0
    assert read_json(tmp_path / "m" / "metrics.json") == single
    assert run(workspace, "metrics", "--a", a, "--b", tmp_path / "r" / "images") == 2


def test_train_adaptor_outputs(workspace):
    out = workspace / "adaptor"
    assert (out / "adaptor.json").exists() and (out / "adaptor.bin").exists()
    assert len((out / "adaptor_log.jsonl").read_text().splitlines()) == 3
    evaluation = read_json(out / "eval.json")
    assert evaluation["pairs"] == {"train": 6, "held_out": 2}
    assert evaluation["held_out"]["umeyama"] == pytest.approx(0.0, abs=1e-9)
    assert evaluation["held_out"]["adaptor"] > 0.0


def test_transform_pose(workspace, capsys):
    pose = ["1", "0", "0", "1", "0", "1", "0", "2", "0", "0", "1", "3"]
    capsys.readouterr()
    assert run(workspace, "transform-pose", "--adaptor", workspace / "adaptor" / "adaptor.json", "--pose", *pose) == 0
    values = [float(x) for x in capsys.readouterr().out.split()]
    assert len(values) == 12
    rotation = np.array(values).reshape(3, 4)[:, :3]
    np.testing.assert_allclose(rotation @ rotation.T, np.eye(3), atol=1e-9)

    pairs = workspace / "scene" / "pairs.json"
    assert run(workspace, "transform-pose", "--baseline", "umeyama", "--pairs", pairs, "--pose", *pose) == 0
    truth = read_json(workspace / "scene" / "truth.json")["similarity"]
    expected = truth["scale"] * np.asarray(truth["rotation"]) @ [1.0, 2.0, 3.0] + truth["translation"]
    values = np.array([float(x) for x in capsys.readouterr().out.split()]).reshape(3, 4)
    np.testing.assert_allclose(values[:, 3], expected, atol=1e-9)


def test_label_and_evaluate(workspace, tmp_path, capsys):
    args = ["--scene", workspace / "scene", "--adaptor", workspace / "adaptor" / "adaptor", "--count", 3]
    assert run(workspace, "label", *args, "--renderer", workspace / "train" / "renderer", "--out", tmp_path / "l") == 0
    views = read_json(tmp_path / "l" / "views.json")["views"]
    assert [v["index"] for v in views] == [0, 1, 2]
    assert sorted(os.listdir(tmp_path / "l" / "images")) == ["novel_0000.ppm", "novel_0001.ppm", "novel_0002.ppm"]
    labels = read_json(tmp_path / "l" / "labels3d.json")
    assert {box["frame"] for box in labels} <= {0, 1, 2}
    for box in read_json(tmp_path / "l" / "labels2d.json"):
        assert len(box["bbox"]) == 4

    assert run(workspace, "label", *args, "--no-images", "--out", tmp_path / "n") == 0
    assert not (tmp_path / "n" / "images").exists()
    # same seed, same perturbations
    assert read_json(tmp_path / "n" / "labels3d.json") == labels

    anns = workspace / "scene" / "anns.json"
    capsys.readouterr()
    assert run(workspace, "eval-labels", "--gt", anns, "--pred", anns) == 0
    assert json.loads(capsys.readouterr().out) == {"ap": 100.0, "ad": 0.0, "gate": 2.0}
    assert run(workspace, "eval-labels", "--gt", anns, "--pred", anns, "--gate", 0.5) == 0
    assert json.loads(capsys.readouterr().out)["gate"] == 0.5


def test_bench(workspace, capsys):
    capsys.readouterr()
    assert run(workspace, "bench", "--scene", workspace / "scene", "--frames", 2) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["frames"] == 2
    assert report["resolution"] == [24, 16]
    assert report["threads"] == 1
    assert report["forward_ms"] > 0 and report["forward_backward_ms"] > 0
