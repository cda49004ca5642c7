import json

import numpy as np
import pytest
import torch

from humanfield.cameras import make_turntable_rig, project_points
from humanfield.config import default_config, load_config, make_config, merge_config, save_config
from humanfield.errors import ConfigError, FormatError, VersionMismatchError
from humanfield.io import (load_checkpoint, load_depth, load_image, load_mesh, load_rig, load_vertex_set,
                           save_checkpoint, save_depth, save_image, save_mesh, save_rig, save_vertex_set)
from humanfield.mesh import Mesh


def test_config_round_trip(tmp_path):
    cfg = make_config({"train": {"lambda_eik": 0.25}, "seed": 9})
    save_config(tmp_path / "c.json", cfg)
    assert load_config(tmp_path / "c.json") == cfg


def test_partial_config_is_completed(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"render": {"n_samples": 32}}))
    cfg = load_config(tmp_path / "c.json")
    assert cfg["render"]["n_samples"] == 32
    assert cfg["train"] == default_config()["train"]


@pytest.mark.parametrize("override", [
    {"train": {"lambda_rgb": -1.0}},
    {"model": {"knn_k": 0}},
    {"nonsense": 1},
    {"train": {"no_such_key": 1}},
    {"guidance": {"t_min": 0.9, "t_max": 0.5}},
])
def test_invalid_config_rejected(override):
    with pytest.raises(ConfigError):
        make_config(override)


def test_missing_or_corrupt_config(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError, match="bad.json"):
        load_config(tmp_path / "bad.json")


def test_merge_does_not_mutate_base():
    base = default_config()
    merge_config(base, {"seed": 5})
    assert base["seed"] == 0


def test_rig_round_trip_projections(tmp_path):
    cams = make_turntable_rig(4, 2.7, elevation=12.0, width=64, height=48)
    save_rig(tmp_path / "rig.json", cams)
    loaded = load_rig(tmp_path / "rig.json")
    pts = np.random.default_rng(0).uniform(-0.5, 0.5, size=(100, 3))
    for a, b in zip(cams, loaded):
        assert a == b
        assert np.abs(project_points(a, pts)[0] - project_points(b, pts)[0]).max() < 1e-6


def test_rig_version_mismatch(tmp_path):
    save_rig(tmp_path / "rig.json", make_turntable_rig(1, 1.0))
    doc = json.loads((tmp_path / "rig.json").read_text())
    doc["version"] = 99
    (tmp_path / "rig.json").write_text(json.dumps(doc))
    with pytest.raises(VersionMismatchError):
        load_rig(tmp_path / "rig.json")


def test_image_round_trip_is_8bit(tmp_path):
    img = np.random.default_rng(0).uniform(size=(7, 9, 3))
    save_image(tmp_path / "a.png", img)
    back = load_image(tmp_path / "a.png")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_depth_round_trip(tmp_path):
    depth = np.linspace(1.0, 3.0, 48).reshape(6, 8)
    mask = depth < 2.5
    save_depth(tmp_path / "d.png", depth, mask)
    back, m = load_depth(tmp_path / "d.png")
    assert np.array_equal(m, mask)
    assert np.abs(back[mask] - depth[mask]).max() < 2.0 / 65534


def test_mesh_and_vertex_set_round_trip(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    n = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-9)
    save_mesh(tmp_path / "m.obj", Mesh(v, f, n))
    m = load_mesh(tmp_path / "m.obj")
    assert np.allclose(m.vertices, v) and np.array_equal(m.faces, f) and np.allclose(m.normals, n)
    labels = np.array([0, 1, 1, 5])
    save_vertex_set(tmp_path / "verts.obj", v, labels)
    lv, ll = load_vertex_set(tmp_path / "verts.obj")
    assert np.allclose(lv, v) and np.array_equal(ll, labels)


def test_checkpoint_versioning(tmp_path):
    save_checkpoint(tmp_path / "c.pt", {"x": torch.arange(3)})
    assert torch.equal(load_checkpoint(tmp_path / "c.pt")["x"], torch.arange(3))
    torch.save({"format": "humanfield-checkpoint", "version": 0}, tmp_path / "old.pt")
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path / "old.pt")
    (tmp_path / "junk.pt").write_bytes(b"garbage")
    with pytest.raises(FormatError, match="junk.pt"):
        load_checkpoint(tmp_path / "junk.pt")


def test_missing_files_name_the_path(tmp_path):
    for loader in (load_image, load_mesh, load_rig, load_checkpoint):
        with pytest.raises(FileNotFoundError, match="missing"):
            loader(tmp_path / "missing")
