import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import tiny_config
from humanfield.cli import main
from humanfield.config import save_config
from humanfield.io import load_mesh


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = tiny_config(train={"iterations": 2}, finetune={"iterations": 1, "n_views": 2},
                      eval={"mesh_resolution": 16, "gt_mesh_resolution": 48, "n_samples": 10000})
    save_config(root / "cfg.json", cfg)
    return root


def run(*argv):
    return main([str(a) for a in argv])


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_make_scene_then_eval_analytic_mesh(workdir, capsys):
    scene = workdir / "sphere"
    assert run("make-scene", "--kind", "sphere", "--config", workdir / "cfg.json", "--out", scene) == 0
    info = last_json(capsys)
    assert info["kind"] == "sphere"
    for name in ("scene.json", "vertices.obj", "rig_source.json", "source_00.png", "eval_02_depth.png",
                 "analytic_mesh.obj"):
        assert (scene / name).exists()
    mesh = load_mesh(scene / "analytic_mesh.obj")
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert np.allclose(radii, 1.0, atol=0.02)
    out = workdir / "eval_sphere"
    assert run("eval", "--scene", scene, "--mesh", scene / "analytic_mesh.obj", "--config", workdir / "cfg.json",
               "--out", out) == 0
    report = last_json(capsys)
    # self-comparison noise bound is stated relative to the bounding-box diagonal
    assert report["chamfer"] < 0.01 * report["per_scene"]["scene"]["bbox_diagonal"]
    assert report["normal_consistency"] > 0.99
    assert (out / "eval.jsonl").exists()


def test_train_and_downstream_commands(workdir, capsys):
    cfg = workdir / "cfg.json"
    scene, run_dir = workdir / "person", workdir / "run"
    assert run("make-scene", "--config", cfg, "--out", scene) == 0
    assert run("train", "--scene", scene, "--config", cfg, "--out", run_dir) == 0
    assert last_json(capsys)["iteration"] == 1
    ckpt = run_dir / "checkpoint.pt"
    assert ckpt.exists() and (run_dir / "losses.jsonl").exists()

    assert run("extract-mesh", "--scene", scene, "--checkpoint", ckpt, "--out", workdir / "mesh") == 0
    assert (workdir / "mesh" / "mesh.obj").exists()
    assert run("render", "--scene", scene, "--checkpoint", ckpt, "--out", workdir / "render") == 0
    assert (workdir / "render" / "normal_02.png").exists()
    assert run("infer", "--scene", scene, "--checkpoint", ckpt, "--out", workdir / "infer") == 0
    assert (workdir / "infer" / "novel_00.png").exists()
    assert run("refine", "--scene", scene, "--checkpoint", ckpt, "--out", workdir / "refine") == 0
    assert (workdir / "refine" / "refined.pt").exists()
    capsys.readouterr()
    assert run("eval", "--scene", scene, "--checkpoint", ckpt, "--out", workdir / "eval") == 0
    report = last_json(capsys)
    assert set(report) >= {"chamfer", "normal_consistency", "psnr", "ssim", "units", "per_scene"}


def test_ablate_writes_record(workdir, capsys):
    out = workdir / "ablate"
    assert run("ablate", "--config", workdir / "cfg.json", "--iterations", 1, "--no-tokens", "--no-guidance",
               "--out", out) == 0
    record = last_json(capsys)
    assert record["toggles"] == {"tokens": False, "multi_target": True, "guidance": False}
    assert len((out / "ablation.jsonl").read_text().splitlines()) == 1


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run() == 2
    assert run("train", "--bogus") == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"lambda_rgb": -1}}))
    assert run("train", "--config", bad, "--out", tmp_path) == 2
    assert "lambda_rgb" in capsys.readouterr().err
    bad.write_text("{not json")
    assert run("train", "--config", bad, "--out", tmp_path) == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    missing = tmp_path / "nope.pt"
    assert run("render", "--checkpoint", missing, "--out", tmp_path) == 1
    assert str(missing) in capsys.readouterr().err
    assert run("eval", "--out", tmp_path) == 2


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "humanfield.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("make-scene", "train", "infer", "refine", "extract-mesh", "render", "eval", "ablate"):
        assert cmd in res.stdout
