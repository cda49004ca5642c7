"""Evaluation harness: novel-view images and extracted meshes against the analytic scene."""

from __future__ import annotations

import numpy as np
import torch

from .field import flush_denormals
from .mesh import Mesh
from .metrics import EvalReport, psnr, ssim, surface_metrics
from .model import Reconstructor
from .renderer import extract_mesh, render_view
from .scenes import SyntheticScene
from .training import SceneData


def analytic_mesh(scene: SyntheticScene, resolution: int = 256) -> Mesh:
    return extract_mesh(scene.sdf_torch, scene.bbox, resolution, dtype=torch.float64)


def predicted_mesh(model: Reconstructor, data: SceneData, resolution: int = 128) -> Mesh:
    with torch.no_grad(), flush_denormals():
        ctx = model.encode(data.source)
        return extract_mesh(ctx.sdf, data.scene.bbox, resolution)


def render_views(model: Reconstructor, data: SceneData, cameras, cfg: dict) -> list[dict]:
    """Deterministic (unjittered) colour / normal / depth maps as numpy arrays."""
    with torch.no_grad(), flush_denormals():
        ctx = model.encode(data.source)
        out = []
        for cam in cameras:
            maps = render_view(cam, ctx, data.scene.bbox, cfg["render"]["n_samples"], ctx.inv_s,
                               chunk=cfg["render"]["chunk"])
            out.append({k: v.double().numpy() for k, v in maps.items()})
    return out


def mean_color_baseline(image: np.ndarray) -> np.ndarray:
    """The best constant-colour prediction of ``image`` under MSE."""
    return np.broadcast_to(image.reshape(-1, 3).mean(axis=0), image.shape)


def image_metrics(predictions, references) -> dict:
    p = [psnr(np.clip(a, 0, 1), b) for a, b in zip(predictions, references)]
    s = [ssim(np.clip(a, 0, 1), b) for a, b in zip(predictions, references)]
    base = [psnr(mean_color_baseline(b), b) for b in references]
    return {"psnr": float(np.mean(p)), "ssim": float(np.mean(s)), "baseline_psnr": float(np.mean(base)),
            "psnr_per_view": p}


def evaluate(model: Reconstructor, data: SceneData, cfg: dict, rng=0, gt_mesh: Mesh | None = None,
             name: str = "scene") -> tuple[EvalReport, dict]:
    """EvalReport for one scene plus the rendered maps and meshes used to compute it."""
    e = cfg["eval"]
    views = render_views(model, data, data.eval_cameras, cfg)
    img = image_metrics([v["color"] for v in views], list(data.eval_images))
    pred = predicted_mesh(model, data, e["mesh_resolution"])
    gt = gt_mesh if gt_mesh is not None else analytic_mesh(data.scene, e["gt_mesh_resolution"])
    if pred.is_empty:
        cd, nc = float("inf"), 0.0
    else:
        cd, nc = surface_metrics(pred, gt, e["n_samples"], rng)
    per = {name: {"chamfer": cd, "normal_consistency": nc, "psnr": img["psnr"], "ssim": img["ssim"],
                  "baseline_psnr": img["baseline_psnr"], "bbox_diagonal": data.scene.diagonal}}
    report = EvalReport(cd, nc, img["psnr"], img["ssim"], per_scene=per)
    return report, {"views": views, "mesh": pred, "gt_mesh": gt}
