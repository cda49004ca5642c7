"""Run configuration: a nested JSON document with validated defaults."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError

DEFAULTS: dict = {
    "seed": 0,
    "scene": {
        "kind": "capsule_person",
        "seed": 0,
        "n_vertices": 1024,
        "vertex_jitter": 0.01,
        "resolution": 128,
        "fov_deg": 40.0,
        "camera_radius": 2.7,
        "n_source_views": 3,
        "source_elevation": 0.0,
        "n_target_views": 12,
        "target_elevation": 10.0,
        "n_eval_views": 3,
        "eval_elevation": 20.0,
        "eval_azimuth_offset": 60.0,
    },
    "model": {
        "backbone_channels": [16, 32, 64],
        "d_model": 64,
        "heads": 4,
        "n_self_attention": 2,
        "token_init_std": 0.02,
        "knn_k": 4,
        "knn_eps": 1e-4,
        "pe_bands": 6,
        "sdf_hidden": 256,
        "sdf_layers": 6,
        "sdf_skip": 3,
        "geo_dim": 64,
        "softplus_beta": 100.0,
        "init_radius": 0.2,
        "blend_hidden": 128,
        "view_enc_hidden": 64,
        "init_inv_s": 20.0,
        "use_tokens": True,
    },
    "render": {
        "n_samples": 64,
        "stratified": True,
        "chunk": 4096,
    },
    "train": {
        "iterations": 2000,
        "lr": 5e-4,
        "warmup_iterations": 200,
        "lr_final_factor": 0.05,
        "patch_size": 16,
        "n_targets": 3,
        "multi_target": True,
        "eikonal_points": 512,
        "smooth_std": 0.01,
        "smooth_max_points": 0,
        "checkpoint_every": 500,
        "log_every": 1,
        "lambda_rgb": 1.0,
        "lambda_eik": 0.1,
        "lambda_sm": 0.01,
        "lambda_sds": 1e-4,
        "lambda_mask": 1.0,
    },
    "finetune": {
        "iterations": 150,
        "lr": 1e-4,
        "n_views": 8,
        "elevation": 10.0,
        "resolution": 32,
        "views_per_iter": 1,
        "train_sharpness": True,
        "rgb_patch_size": 16,
        "backend": "pull_to_target",
        "lambda_rgb": 1.0,
        "lambda_eik": 0.1,
        "lambda_sm": 0.01,
        "lambda_sds": 1e-4,
        "lambda_mask": 1.0,
    },
    "guidance": {
        "cfg_weight": 7.5,
        "t_min": 0.52,
        "t_max": 0.98,
        "prompt": "Best quality, human, normal map",
        "upsample_factor": 4,
        "weighting": "constant",
        "num_train_timesteps": 1000,
        "beta_start": 1e-4,
        "beta_end": 2e-2,
        "mock_bias": 0.0,
        "mock_pull": 1.0,
    },
    "eval": {
        "mesh_resolution": 128,
        "gt_mesh_resolution": 256,
        "n_samples": 10000,
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def merge_config(base: dict, override: dict, _path: str = "") -> dict:
    """Deep-merge ``override`` into a copy of ``base``; unknown keys are rejected."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{_path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = merge_config(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def validate_config(cfg: dict) -> dict:
    def check(cond, msg):
        if not cond:
            raise ConfigError(msg)

    for section in ("train", "finetune"):
        for name in ("lambda_rgb", "lambda_eik", "lambda_sm", "lambda_sds", "lambda_mask"):
            v = cfg[section][name]
            check(isinstance(v, (int, float)) and v >= 0, f"{section}.{name} must be >= 0, got {v!r}")
        check(cfg[section]["iterations"] >= 0, f"{section}.iterations must be >= 0")
        check(cfg[section]["lr"] >= 0, f"{section}.lr must be >= 0")
    check(cfg["train"]["warmup_iterations"] >= 0, "train.warmup_iterations must be >= 0")
    check(0 <= cfg["train"]["lr_final_factor"] <= 1, "train.lr_final_factor must be in [0, 1]")
    m = cfg["model"]
    check(isinstance(m["knn_k"], int) and m["knn_k"] >= 1, "model.knn_k must be an integer >= 1")
    check(m["knn_k"] <= cfg["scene"]["n_vertices"], "model.knn_k must not exceed scene.n_vertices")
    check(m["d_model"] % m["heads"] == 0, "model.d_model must be divisible by model.heads")
    check(sum(m["backbone_channels"]) % m["heads"] == 0, "sum of backbone channels must be divisible by heads")
    check(m["sdf_layers"] >= 1 and 0 <= m["sdf_skip"] < m["sdf_layers"], "model.sdf_skip must index a hidden layer")
    check(m["init_inv_s"] > 0, "model.init_inv_s must be positive")
    check(cfg["render"]["n_samples"] >= 2, "render.n_samples must be >= 2")
    t = cfg["train"]
    check(t["patch_size"] >= 1, "train.patch_size must be >= 1")
    check(1 <= t["n_targets"], "train.n_targets must be >= 1")
    check(t["smooth_std"] > 0, "train.smooth_std must be positive")
    s = cfg["scene"]
    check(s["kind"] in ("sphere", "capsule_person"), f"unknown scene.kind {s['kind']!r}")
    check(s["n_source_views"] >= 1 and s["n_target_views"] >= 1, "scene view counts must be >= 1")
    check(s["camera_radius"] > 0, "scene.camera_radius must be positive")
    g = cfg["guidance"]
    check(0 < g["t_min"] <= g["t_max"] <= 1, "guidance requires 0 < t_min <= t_max <= 1")
    check(g["cfg_weight"] >= 0, "guidance.cfg_weight must be >= 0")
    check(isinstance(g["upsample_factor"], int) and g["upsample_factor"] >= 1, "guidance.upsample_factor must be >= 1")
    check(g["weighting"] in ("constant", "one_minus_alphabar"), f"unknown guidance.weighting {g['weighting']!r}")
    check(cfg["finetune"]["backend"] in ("perfect", "biased", "pull_to_target"),
          f"unknown finetune.backend {cfg['finetune']['backend']!r}")
    return cfg


def make_config(override: dict | None = None) -> dict:
    return validate_config(merge_config(DEFAULTS, override or {}))


def save_config(path, cfg: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True))


def load_config(path) -> dict:
    """Read a (possibly partial) config document and fill in defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return make_config(doc)
