import warnings

import numpy as np
import pytest
import torch

from humanfield.config import make_config

warnings.filterwarnings("ignore", message="The value of the smallest subnormal")

TINY_MODEL = {"backbone_channels": [4, 4, 4], "d_model": 8, "heads": 2, "n_self_attention": 1,
              "sdf_hidden": 16, "sdf_layers": 3, "sdf_skip": 1, "geo_dim": 4, "blend_hidden": 8,
              "view_enc_hidden": 8}


def tiny_config(**sections):
    """Miniature model and render settings that keep unit tests fast."""
    over = {"scene": {"n_vertices": 64, "resolution": 24, "n_target_views": 4},
            "model": dict(TINY_MODEL), "render": {"n_samples": 8},
            "train": {"patch_size": 4, "n_targets": 2, "eikonal_points": 32, "smooth_max_points": 64,
                      "checkpoint_every": 0},
            "finetune": {"resolution": 8, "rgb_patch_size": 4},
            "guidance": {"upsample_factor": 2}}
    for name, values in sections.items():
        over.setdefault(name, {}).update(values)
    return make_config(over)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data():
    from humanfield.scenes import make_synthetic_scene
    from humanfield.training import build_scene_data

    cfg = tiny_config()
    scene = make_synthetic_scene("capsule_person", 0, n_vertices=cfg["scene"]["n_vertices"])
    return cfg, build_scene_data(scene, cfg)


def fd_grad(f, x: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Central finite differences of a scalar function of a float64 tensor."""
    out = torch.zeros_like(x)
    with torch.no_grad():
        for i in range(x.numel()):
            e = torch.zeros_like(x)
            e.view(-1)[i] = h
            out.view(-1)[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    return float(torch.linalg.norm(a - b) / torch.linalg.norm(b))


ACCEPTANCE: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"criterion {number} {'PASS' if ok else 'FAIL'}: {name} [{detail}]")
    print(ACCEPTANCE[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
