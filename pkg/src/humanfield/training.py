"""Multi-target patch sampling, the feed-forward training loop and SDS finetuning."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .cameras import Camera, make_turntable_rig, pixels_to_rays, project_points
from .errors import TrainingDivergedError
from .field import flush_denormals, sdf_gradient
from .guidance import (BiasedDenoiser, DenoiserBackend, GuidanceConfig, NoiseSchedule, PerfectDenoiser,
                       PullToTargetDenoiser, sds_loss_and_grad)
from .io import load_checkpoint, save_checkpoint
from .losses import LossReport, eikonal_loss, mask_loss, rgb_loss, smooth_loss, total_loss
from .model import Reconstructor, SourceViews
from .renderer import render_rays, render_view
from .scenes import SyntheticScene, normals_to_rgb, render_reference

log = logging.getLogger(__name__)

MAX_VIEW_FAILURES = 10


@dataclass
class PatchBatch:
    view_indices: np.ndarray  # (L,)
    pixels: np.ndarray  # (L, P*P, 2) integer (u, v)
    part: int
    centers: np.ndarray  # (L, 2) sampled window centres, inside the part's projected box
    boxes: np.ndarray  # (L, 2, 2) per-view part AABB [[umin, vmin], [umax, vmax]]
    colors: np.ndarray | None = None  # (L, P*P, 3)
    masks: np.ndarray | None = None  # (L, P*P) foreground flags


def _part_box(camera: Camera, verts: np.ndarray):
    pix, z = project_points(camera, verts)
    ok = (z > 0) & (pix[:, 0] >= -0.5) & (pix[:, 0] <= camera.width - 0.5) \
        & (pix[:, 1] >= -0.5) & (pix[:, 1] <= camera.height - 0.5)
    if not ok.any():
        return None
    p = pix[ok]
    lo = np.clip(p.min(axis=0), 0, [camera.width - 1, camera.height - 1])
    hi = np.clip(p.max(axis=0), 0, [camera.width - 1, camera.height - 1])
    return np.stack([lo, hi])


def _sample_center(box, rng):
    out = []
    for a in range(2):
        lo, hi = int(np.ceil(box[0, a])), int(np.floor(box[1, a]))
        out.append(rng.integers(lo, hi + 1) if lo <= hi else int(np.rint(box[:, a].mean())))
    return np.array(out, dtype=np.int64)


def sample_patch_batch(scene: SyntheticScene, cameras: list[Camera], L: int, patch: int,
                       rng: np.random.Generator, images: np.ndarray | None = None,
                       masks: np.ndarray | None = None) -> PatchBatch:
    """L patches from distinct views, all centred on the projection of one body part.

    A view where the part projects to nothing is replaced by another view; after
    ``MAX_VIEW_FAILURES`` replacements a new part is drawn. ``images`` (V, H, W, 3)
    fills in the ground-truth colours and ``masks`` (V, H, W) the foreground flags.
    """
    if not 1 <= L <= len(cameras):
        raise ValueError(f"L={L} must be in [1, {len(cameras)}]")
    if patch < 1:
        raise ValueError("patch must be >= 1")
    parts = np.unique(scene.part_labels)
    for _ in range(100):
        part = int(parts[rng.integers(len(parts))])
        verts = scene.vertices[scene.part_labels == part]
        pool = list(rng.permutation(len(cameras)))
        chosen, boxes, failures = [], [], 0
        while len(chosen) < L and pool and failures <= MAX_VIEW_FAILURES:
            v = int(pool.pop())
            box = _part_box(cameras[v], verts)
            if box is None:
                failures += 1
                continue
            chosen.append(v)
            boxes.append(box)
        if len(chosen) == L:
            break
    else:
        raise RuntimeError("no body part is visible in enough target views")
    off = np.arange(patch) - patch // 2
    du, dv = np.meshgrid(off, off, indexing="xy")
    window = np.stack([du.ravel(), dv.ravel()], axis=-1)
    centers, pixels = [], []
    for v, box in zip(chosen, boxes):
        cam = cameras[v]
        c = _sample_center(box, rng)
        start = np.clip(c + off[0], 0, [max(cam.width - patch, 0), max(cam.height - patch, 0)])
        px = window - off[0] + start
        px = np.clip(px, 0, [cam.width - 1, cam.height - 1])
        centers.append(c)
        pixels.append(px)
    pixels = np.stack(pixels)
    colors = None
    if images is not None:
        colors = np.stack([images[v][pixels[i, :, 1], pixels[i, :, 0]] for i, v in enumerate(chosen)])
    fg = None
    if masks is not None:
        fg = np.stack([masks[v][pixels[i, :, 1], pixels[i, :, 0]] for i, v in enumerate(chosen)])
    return PatchBatch(np.array(chosen), pixels, part, np.stack(centers), np.stack(boxes), colors, fg)


@dataclass
class SceneData:
    """One training subject: analytic scene, source views and target/eval supervision."""

    scene: SyntheticScene
    source: SourceViews
    target_cameras: list[Camera]
    target_images: np.ndarray  # (V, H, W, 3)
    eval_cameras: list[Camera]
    eval_images: np.ndarray
    target_masks: np.ndarray | None = None  # (V, H, W) foreground from reference depth
    source_masks: np.ndarray | None = None

    @property
    def center(self) -> np.ndarray:
        return self.scene.bbox.mean(axis=0)


def build_scene_data(scene: SyntheticScene, cfg: dict) -> SceneData:
    s = cfg["scene"]
    center = scene.bbox.mean(axis=0)
    kw = dict(width=s["resolution"], height=s["resolution"], fov_deg=s["fov_deg"])
    src = make_turntable_rig(s["n_source_views"], s["camera_radius"], s["source_elevation"], center, **kw)
    tgt = make_turntable_rig(s["n_target_views"], s["camera_radius"], s["target_elevation"], center, **kw)
    ev = make_turntable_rig(s["n_eval_views"], s["camera_radius"], s["eval_elevation"], center,
                            azimuth_offset=s["eval_azimuth_offset"], **kw)

    def refs(cams):
        r = [render_reference(scene, c) for c in cams]
        return np.stack([x.image for x in r]), np.stack([x.mask for x in r])

    (src_img, src_mask), (tgt_img, tgt_mask) = refs(src), refs(tgt)
    source = SourceViews(src_img, src, scene.vertices, scene.part_labels)
    return SceneData(scene, source, tgt, tgt_img, ev, refs(ev)[0], tgt_mask, src_mask)


def build_model(cfg: dict, n_vertices: int) -> Reconstructor:
    """Seeded model construction that leaves the global torch RNG untouched."""
    with torch.random.fork_rng():
        torch.manual_seed(int(cfg["seed"]))
        return Reconstructor(n_vertices, cfg["model"])


def model_from_checkpoint(payload: dict) -> Reconstructor:
    model = build_model(payload["config"], payload["n_vertices"])
    model.load_state_dict(payload["model"])
    return model


def learning_rate(t_cfg: dict, iteration: int) -> float:
    """Linear warm-up to ``lr`` followed by cosine decay to ``lr * lr_final_factor``."""
    lr, warm, n = t_cfg["lr"], t_cfg["warmup_iterations"], t_cfg["iterations"]
    if iteration < warm:
        return lr * (iteration + 1) / warm
    frac = (iteration - warm) / max(n - warm, 1)
    floor = t_cfg["lr_final_factor"]
    return lr * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))


def _iteration_streams(seed: int, iteration: int, salt: int = 0):
    rng = np.random.default_rng([int(seed), int(iteration), salt])
    gen = torch.Generator().manual_seed(int(rng.integers(2**62)))
    return rng, gen


def _batch_rays(cameras, batch: PatchBatch, dtype):
    o, d = [], []
    for i, v in enumerate(batch.view_indices):
        ro, rd = pixels_to_rays(cameras[v], batch.pixels[i].astype(np.float64))
        o.append(ro)
        d.append(rd)
    return torch.as_tensor(np.concatenate(o), dtype=dtype), torch.as_tensor(np.concatenate(d), dtype=dtype)


def uniform_box_points(bbox, n, gen, dtype=torch.float32):
    lo = torch.as_tensor(bbox[0], dtype=dtype)
    hi = torch.as_tensor(bbox[1], dtype=dtype)
    return lo + (hi - lo) * torch.rand(n, 3, generator=gen, dtype=dtype)


def _regularizers(ctx, out, bbox, cfg_t, lam, gen, dtype):
    """Eikonal and smoothness over ray samples plus uniform box samples."""
    zero = torch.zeros((), dtype=dtype)
    if lam["lambda_eik"] == 0 and lam["lambda_sm"] == 0:
        return zero, zero
    pts = uniform_box_points(bbox, cfg_t["eikonal_points"], gen, dtype)
    _, g_uni = sdf_gradient(ctx.sdf, pts, create_graph=True)
    ray_pts = out["points"].reshape(-1, 3)
    ray_g = out["gradients"].reshape(-1, 3)
    grads = torch.cat([ray_g, g_uni])
    eik = eikonal_loss(grads) if lam["lambda_eik"] else zero
    sm = zero
    if lam["lambda_sm"]:
        all_pts = torch.cat([ray_pts.detach(), pts.detach()])
        cap = cfg_t.get("smooth_max_points", 0)
        if cap and cap < len(all_pts):
            sel = torch.randperm(len(all_pts), generator=gen)[:cap]
            all_pts, grads = all_pts[sel], grads[sel]
        sm = smooth_loss(all_pts, ctx.sdf, cfg_t["smooth_std"], gen, gradients=grads)
    return eik, sm


def _lambdas(section: dict) -> dict:
    return {k: section[k] for k in ("lambda_rgb", "lambda_eik", "lambda_sm", "lambda_sds", "lambda_mask")}


def _mask_term(out, batch: PatchBatch, lam, dtype):
    if not lam["lambda_mask"] or batch.masks is None:
        return torch.zeros((), dtype=dtype)
    return mask_loss(out["opacity"], torch.as_tensor(batch.masks.reshape(-1), dtype=dtype))


def _snapshot(path, model, optimizer, cfg, iteration, n_vertices, extra=None):
    payload = {"config": cfg, "iteration": iteration, "n_vertices": n_vertices,
               "model": model.state_dict(), "optimizer": optimizer.state_dict()}
    payload.update(extra or {})
    save_checkpoint(path, payload)


def _check_finite(report: LossReport, total, out_dir, model, optimizer, cfg, n_vertices):
    if np.isfinite(float(torch.as_tensor(total).detach())):
        return
    where = ""
    if out_dir is not None:
        path = Path(out_dir) / "diverged.pt"
        _snapshot(path, model, optimizer, cfg, report.iteration, n_vertices, {"report": report.to_dict()})
        where = f"; snapshot written to {path}"
    raise TrainingDivergedError(f"non-finite loss at iteration {report.iteration}: {report.to_dict()}{where}")


def train(scenes: list[SceneData], cfg: dict, out_dir=None, resume=None, callback=None):
    """Feed-forward training over ``scenes``; returns ``(model, reports)``.

    Every iteration draws its randomness from ``(seed, iteration)``, so a run
    resumed from a checkpoint continues exactly like an uninterrupted one.
    Reports are appended to ``out_dir/losses.jsonl`` and checkpoints written to
    ``out_dir/checkpoint.pt`` every ``train.checkpoint_every`` iterations and at the end.
    """
    with flush_denormals():
        return _train(scenes, cfg, out_dir, resume, callback)


def _train(scenes, cfg, out_dir, resume, callback):
    if not scenes:
        raise ValueError("need at least one training scene")
    n_vertices = len(scenes[0].source.vertices)
    if any(len(s.source.vertices) != n_vertices for s in scenes):
        raise ValueError("all scenes must share the same vertex count")
    t_cfg, r_cfg = cfg["train"], cfg["render"]
    model = build_model(cfg, n_vertices)
    optimizer = torch.optim.Adam(model.parameters(), lr=t_cfg["lr"])
    start = 0
    if resume is not None:
        payload = load_checkpoint(resume) if not isinstance(resume, dict) else resume
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        start = int(payload["iteration"])
    lam = _lambdas(t_cfg)
    L = t_cfg["n_targets"] if t_cfg["multi_target"] else 1
    dtype = torch.float32
    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "losses.jsonl", "a" if resume is not None else "w")
    reports = []
    seed = int(cfg["seed"])
    try:
        for it in range(start, t_cfg["iterations"]):
            rng, gen = _iteration_streams(seed, it)
            data = scenes[int(rng.integers(len(scenes)))]
            bbox = data.scene.bbox
            ctx = model.encode(data.source)
            batch = sample_patch_batch(data.scene, data.target_cameras, L, t_cfg["patch_size"], rng,
                                       data.target_images, data.target_masks)
            ro, rd = _batch_rays(data.target_cameras, batch, dtype)
            out = render_rays(ctx, ro, rd, bbox, r_cfg["n_samples"], ctx.inv_s, stratified=r_cfg["stratified"],
                              generator=gen, create_graph=True)
            target = torch.as_tensor(batch.colors.reshape(-1, 3), dtype=dtype)
            terms = {"rgb": rgb_loss(out["color"], target), "mask": _mask_term(out, batch, lam, dtype)}
            terms["eikonal"], terms["smooth"] = _regularizers(ctx, out, bbox, t_cfg, lam, gen, dtype)
            total, report = total_loss(terms, lam, it, "train", float(ctx.inv_s.detach()))
            _check_finite(report, total, out_dir, model, optimizer, cfg, n_vertices)
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            for group in optimizer.param_groups:
                group["lr"] = learning_rate(t_cfg, it)
            optimizer.step()
            reports.append(report)
            if log_file is not None and (it % t_cfg["log_every"] == 0 or it == t_cfg["iterations"] - 1):
                log_file.write(json.dumps(report.to_dict()) + "\n")
                log_file.flush()
            if callback is not None:
                callback(report)
            every = t_cfg["checkpoint_every"]
            if out_dir is not None and every and (it + 1) % every == 0:
                _snapshot(out_dir / "checkpoint.pt", model, optimizer, cfg, it + 1, n_vertices)
    finally:
        if log_file is not None:
            log_file.close()
    if out_dir is not None:
        _snapshot(out_dir / "checkpoint.pt", model, optimizer, cfg, t_cfg["iterations"], n_vertices)
    return model, reports


def make_backend(name: str, cfg: dict) -> DenoiserBackend:
    g = cfg["guidance"]
    if name == "perfect":
        return PerfectDenoiser()
    if name == "biased":
        return BiasedDenoiser(g["mock_bias"])
    if name == "pull_to_target":
        return PullToTargetDenoiser(torch.zeros(1, 3, 1, 1), NoiseSchedule.from_config(GuidanceConfig.from_dict(g)),
                                    g["mock_pull"])
    raise ValueError(f"unknown guidance backend {name!r}")


def finetune_views(data: SceneData, cfg: dict) -> list[Camera]:
    f, s = cfg["finetune"], cfg["scene"]
    return make_turntable_rig(f["n_views"], s["camera_radius"], f["elevation"], data.center,
                              width=f["resolution"], height=f["resolution"], fov_deg=s["fov_deg"])


def finetune_sds(checkpoint, data: SceneData, backend: DenoiserBackend, cfg: dict | None = None, out_path=None):
    """Per-scene refinement of the SDF network (and sharpness) under score distillation.

    ``checkpoint`` is a path or a loaded payload and is never modified; the
    refined model is returned (and written to ``out_path`` if given) together
    with the loss reports. Pull-to-target backends are retargeted to the
    analytic normal map of each rendered view.
    """
    with flush_denormals():
        return _finetune(checkpoint, data, backend, cfg, out_path)


def _finetune(checkpoint, data, backend, cfg, out_path):
    payload = load_checkpoint(checkpoint) if not isinstance(checkpoint, dict) else checkpoint
    cfg = copy.deepcopy(cfg or payload["config"])
    f_cfg, r_cfg = cfg["finetune"], cfg["render"]
    model = model_from_checkpoint(copy.deepcopy(payload))
    trainable = ["sdf"] + (["sharpness"] if f_cfg["train_sharpness"] else [])
    groups = model.param_groups()
    for name, params in groups.items():
        for p in params:
            p.requires_grad_(name in trainable)
    params = [p for g in trainable for p in groups[g]]
    optimizer = torch.optim.Adam(params, lr=f_cfg["lr"])
    gcfg = GuidanceConfig.from_dict(cfg["guidance"])
    schedule = NoiseSchedule.from_config(gcfg)
    lam = _lambdas(f_cfg)
    dtype = torch.float32
    bbox = data.scene.bbox
    with torch.no_grad():
        ctx = model.encode(data.source)
    views = finetune_views(data, cfg)
    targets = {}
    seed = int(cfg["seed"])
    reports = []
    for it in range(f_cfg["iterations"]):
        rng, gen = _iteration_streams(seed, it, salt=1)
        zero = torch.zeros((), dtype=dtype)
        terms = {"rgb": zero, "sds": zero, "eikonal": zero, "smooth": zero, "mask": zero}
        if lam["lambda_rgb"] or lam["lambda_eik"] or lam["lambda_sm"] or lam["lambda_mask"]:
            batch = sample_patch_batch(data.scene, data.source.cameras, 1, f_cfg["rgb_patch_size"], rng,
                                       data.source.images, data.source_masks)
            ro, rd = _batch_rays(data.source.cameras, batch, dtype)
            out = render_rays(ctx, ro, rd, bbox, r_cfg["n_samples"], ctx.inv_s, stratified=r_cfg["stratified"],
                              generator=gen, create_graph=True)
            terms["rgb"] = rgb_loss(out["color"], torch.as_tensor(batch.colors.reshape(-1, 3), dtype=dtype))
            terms["mask"] = _mask_term(out, batch, lam, dtype)
            terms["eikonal"], terms["smooth"] = _regularizers(ctx, out, bbox, cfg["train"], lam, gen, dtype)
        sds_total = zero
        for v in rng.choice(len(views), size=min(f_cfg["views_per_iter"], len(views)), replace=False):
            cam = views[int(v)]
            if isinstance(backend, PullToTargetDenoiser):
                if int(v) not in targets:
                    ref = render_reference(data.scene, cam)
                    rgb = normals_to_rgb(ref.normals, cam)
                    rgb[~ref.mask] = 0.5
                    targets[int(v)] = torch.as_tensor(rgb, dtype=dtype).permute(2, 0, 1)[None]
                backend.target = targets[int(v)]
            maps = render_view(cam, ctx, bbox, r_cfg["n_samples"], ctx.inv_s, stratified=r_cfg["stratified"],
                               seed=int(rng.integers(2**31)), dtype=dtype, create_graph=True)
            s, _ = sds_loss_and_grad(maps["normal"], backend, gcfg, rng, gen, schedule)
            sds_total = sds_total + s
        terms["sds"] = sds_total
        total, report = total_loss(terms, lam, it, "finetune", float(ctx.inv_s.detach()))
        _check_finite(report, total, None, model, optimizer, cfg, payload["n_vertices"])
        optimizer.zero_grad(set_to_none=True)
        if torch.is_tensor(total) and total.requires_grad:
            total.backward()
        optimizer.step()
        reports.append(report)
    for p in model.parameters():
        p.requires_grad_(True)
    if out_path is not None:
        save_checkpoint(out_path, {"config": cfg, "iteration": payload["iteration"], "n_vertices": payload["n_vertices"],
                                   "model": model.state_dict(), "finetune_iterations": f_cfg["iterations"]})
    return model, reports
