"""SDF volume rendering: ray sampling, SDF-to-opacity conversion, compositing, meshing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .cameras import Camera, pixel_grid, pixels_to_rays
from .field import sdf_gradient
from .mesh import Mesh

GRAD_FLOOR = 1e-8


class Sharpness(nn.Module):
    """Learnable inverse standard deviation of the logistic, stored as its log."""

    def __init__(self, init_inv_s: float = 20.0):
        super().__init__()
        if init_inv_s <= 0:
            raise ValueError("inverse standard deviation must be positive")
        self.log_inv_s = nn.Parameter(torch.tensor(math.log(init_inv_s)))

    @property
    def inv_s(self) -> torch.Tensor:
        return torch.exp(self.log_inv_s)

    def forward(self):
        return self.inv_s


@dataclass
class RaySamples:
    depths: torch.Tensor  # (R, M) strictly increasing
    deltas: torch.Tensor  # (R, M) > 0
    hit: torch.Tensor  # (R,) bool: ray intersects the box

    @property
    def is_miss(self) -> bool:
        return not bool(self.hit.any())


def ray_box(rays_o: torch.Tensor, rays_d: torch.Tensor, bbox):
    """Slab test; returns near, far (clamped to >= 0) and a hit mask."""
    bbox = torch.as_tensor(np.asarray(bbox), dtype=rays_o.dtype, device=rays_o.device)
    inv = 1.0 / torch.where(rays_d.abs() < 1e-12, torch.full_like(rays_d, 1e-12), rays_d)
    t0 = (bbox[0] - rays_o) * inv
    t1 = (bbox[1] - rays_o) * inv
    near = torch.minimum(t0, t1).amax(dim=-1).clamp(min=0.0)
    far = torch.maximum(t0, t1).amin(dim=-1)
    return near, far, far > near


def sample_along(near, far, n_samples, jitter=None):
    """Depths in ``n_samples`` equal bins: midpoints, or ``near + (i + jitter) * bin``.

    The last segment length runs to ``far``.
    """
    i = torch.arange(n_samples, dtype=near.dtype, device=near.device)
    offs = torch.full((near.shape[0], n_samples), 0.5, dtype=near.dtype, device=near.device) if jitter is None else jitter
    span = (far - near)[:, None]
    depths = near[:, None] + (i + offs) / n_samples * span
    deltas = torch.cat([depths[:, 1:] - depths[:, :-1], far[:, None] - depths[:, -1:]], dim=-1)
    return depths, deltas


def sample_rays(rays_o, rays_d, bbox, n_samples, stratified=False, generator=None, jitter=None) -> RaySamples:
    if n_samples < 2:
        raise ValueError("need at least two samples per ray")
    near, far, hit = ray_box(rays_o, rays_d, bbox)
    far = torch.where(hit, far, near + 1.0)
    if jitter is None and stratified:
        jitter = torch.rand(near.shape[0], n_samples, generator=generator, dtype=near.dtype)
    depths, deltas = sample_along(near, far, n_samples, jitter)
    return RaySamples(depths, deltas.clamp(min=1e-10), hit)


def sample_ray(origin, direction, bbox, n_samples, stratified=False, generator=None):
    """Single-ray ``sample_rays``; returns ``None`` when the ray misses the box."""
    o = torch.as_tensor(np.asarray(origin), dtype=torch.float64)[None]
    d = torch.as_tensor(np.asarray(direction), dtype=torch.float64)[None]
    s = sample_rays(o, d, bbox, n_samples, stratified, generator)
    if s.is_miss:
        return None
    return RaySamples(s.depths[0], s.deltas[0], s.hit[0])


def sdf_to_alpha(s_prev, s_next, inv_s):
    """max((Phi(s_prev) - Phi(s_next)) / Phi(s_prev), 0) with Phi(x) = sigmoid(inv_s * x).

    Evaluated as ``-expm1(log Phi(s_next) - log Phi(s_prev))`` for stability deep inside.
    """
    inv_s = torch.as_tensor(inv_s, dtype=torch.as_tensor(s_prev).dtype)
    lp = F.logsigmoid(inv_s * s_prev)
    ln = F.logsigmoid(inv_s * s_next)
    return (-torch.expm1(ln - lp)).clamp(min=0.0)


def composite(alphas: torch.Tensor, values: torch.Tensor | None = None):
    """Front-to-back compositing along the last sample axis.

    Returns (accumulated values, weights, opacity). ``values`` is (..., M, k).
    """
    trans = torch.cumprod(torch.cat([torch.ones_like(alphas[..., :1]), 1.0 - alphas[..., :-1]], dim=-1), dim=-1)
    weights = trans * alphas
    opacity = weights.sum(dim=-1)
    acc = None if values is None else (weights[..., None] * values).sum(dim=-2)
    return acc, weights, opacity


def transmittance(alphas: torch.Tensor) -> torch.Tensor:
    return torch.cumprod(torch.cat([torch.ones_like(alphas[..., :1]), 1.0 - alphas[..., :-1]], dim=-1), dim=-1)


class AnalyticField:
    """Closed-form SDF plus an appearance function, in the renderer's field protocol."""

    def __init__(self, sdf_fn, color_fn=None):
        self.sdf_fn = sdf_fn
        self.color_fn = color_fn

    def sdf(self, points):
        return self.sdf_fn(points)

    def __call__(self, points, dirs):
        s = self.sdf_fn(points)
        if self.color_fn is None:
            c = torch.zeros(points.shape[0], 3, dtype=points.dtype)
        else:
            c = self.color_fn(points, dirs)
        return s, c


def sphere_field(radius=1.0, color=(1.0, 0.0, 0.0), center=(0.0, 0.0, 0.0)) -> AnalyticField:
    def sdf(p):
        return torch.linalg.norm(p - torch.as_tensor(center, dtype=p.dtype), dim=-1) - radius

    def col(p, d):
        return torch.as_tensor(color, dtype=p.dtype).expand(p.shape[0], 3)

    return AnalyticField(sdf, col)


def plane_field(normal=(0.0, 0.0, 1.0), offset=0.0) -> AnalyticField:
    def sdf(p):
        n = torch.as_tensor(normal, dtype=p.dtype)
        return p @ (n / torch.linalg.norm(n)) - offset

    return AnalyticField(sdf)


def render_rays(field, rays_o, rays_d, bbox, n_samples, inv_s, *, stratified=False, generator=None,
                jitter=None, create_graph=False):
    """Volume-render a batch of rays through ``field(points, dirs) -> (sdf, rgb)``.

    Per sample the section endpoints are estimated from the SDF and its
    directional derivative, converted to opacity with ``sdf_to_alpha`` and
    composited. Normals are the weighted sum of unit SDF gradients; depth is
    the weighted sum of sample distances (not normalised by opacity).
    Rays that miss ``bbox`` produce zeros.
    """
    samples = sample_rays(rays_o, rays_d, bbox, n_samples, stratified, generator, jitter)
    R, M = samples.depths.shape
    pts = (rays_o[:, None, :] + rays_d[:, None, :] * samples.depths[..., None]).reshape(-1, 3)
    dirs = rays_d[:, None, :].expand(R, M, 3).reshape(-1, 3)
    with torch.enable_grad():
        pts_g = pts.detach().requires_grad_(True) if not pts.requires_grad else pts
        sdf, rgb = field(pts_g, dirs)
        (grad,) = torch.autograd.grad(sdf, pts_g, torch.ones_like(sdf), create_graph=create_graph)
    if not create_graph:
        grad = grad.detach()
    sdf = sdf.reshape(R, M)
    rgb = rgb.reshape(R, M, 3)
    grad = grad.reshape(R, M, 3)
    cos = (grad * rays_d[:, None, :]).sum(-1)
    half = 0.5 * samples.deltas
    alphas = sdf_to_alpha(sdf - cos * half, sdf + cos * half, inv_s)
    alphas = alphas * samples.hit[:, None].to(alphas.dtype)
    gnorm = torch.linalg.norm(grad, dim=-1, keepdim=True)
    degenerate = (gnorm[..., 0] < GRAD_FLOOR)
    unit = grad / gnorm.clamp(min=GRAD_FLOOR)
    color, weights, opacity = composite(alphas, rgb)
    normal = (weights[..., None] * unit).sum(dim=-2)
    depth = (weights * samples.depths).sum(dim=-1)
    return {
        "color": color,
        "normal": normal,
        "depth": depth,
        "opacity": opacity,
        "weights": weights,
        "alphas": alphas,
        "points": pts_g.reshape(R, M, 3),
        "sdf": sdf,
        "gradients": grad,
        "depths": samples.depths,
        "hit": samples.hit,
        "degenerate": degenerate,
    }


def render_ray(field, origin, direction, bbox, n_samples, inv_s, **kw):
    o = torch.as_tensor(np.asarray(origin), dtype=torch.float64)[None]
    d = torch.as_tensor(np.asarray(direction), dtype=torch.float64)[None]
    out = render_rays(field, o, d, bbox, n_samples, inv_s, **kw)
    return {k: v[0] for k, v in out.items()}


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        z = x
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def per_ray_jitter(seed: int, pixel_ids: np.ndarray, n_samples: int) -> np.ndarray:
    """Uniform [0, 1) jitter keyed by (seed, pixel index, sample index); independent of batching."""
    pixel_ids = np.asarray(pixel_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):  # wrapping arithmetic is intended
        key = (np.uint64(seed) * np.uint64(0x100000001B3)) ^ (pixel_ids[:, None] * np.uint64(n_samples)
                                                              + np.arange(n_samples, dtype=np.uint64)[None])
    return (_splitmix64(key) >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def view_normals_rgb(normals_world: torch.Tensor, camera: Camera) -> torch.Tensor:
    """World normals -> view frame with +z towards the viewer, mapped by (n + 1) / 2."""
    R = torch.as_tensor(camera.rotation, dtype=normals_world.dtype)
    n_cam = normals_world @ R.T
    flip = torch.tensor([1.0, -1.0, -1.0], dtype=normals_world.dtype)
    return (n_cam * flip + 1.0) / 2.0


def render_view(camera: Camera, field, bbox, n_samples, inv_s, *, subset=None, chunk=4096,
                stratified=False, seed=0, dtype=torch.float32, create_graph=False):
    """Render colour, normal (RGB-encoded, view frame), depth and opacity for a camera.

    ``subset`` is an optional (N, 2) integer array of (u, v) pixels; the maps are
    then (N, ...) rows in that order. Stratified jitter is keyed per pixel, so a
    subset render matches the same pixels of a full render.
    """
    W, H = camera.width, camera.height
    pixels = pixel_grid(W, H) if subset is None else np.asarray(subset, dtype=np.float64).reshape(-1, 2)
    ids = (pixels[:, 1].astype(np.int64) * W + pixels[:, 0].astype(np.int64))
    o, d = pixels_to_rays(camera, pixels)
    outs = {"color": [], "normal": [], "depth": [], "opacity": []}
    for s in range(0, len(pixels), chunk):
        ro = torch.as_tensor(o[s:s + chunk], dtype=dtype)
        rd = torch.as_tensor(d[s:s + chunk], dtype=dtype)
        jit = torch.as_tensor(per_ray_jitter(seed, ids[s:s + chunk], n_samples), dtype=dtype) if stratified else None
        r = render_rays(field, ro, rd, bbox, n_samples, inv_s, jitter=jit, create_graph=create_graph)
        for k in outs:
            v = r[k]
            outs[k].append(v if create_graph else v.detach())
    maps = {k: torch.cat(v) for k, v in outs.items()}
    maps["normal_world"] = maps["normal"]
    maps["normal"] = view_normals_rgb(maps["normal"], camera)
    if subset is None:
        maps = {k: v.reshape(H, W, *v.shape[1:]) for k, v in maps.items()}
    return maps


def evaluate_grid(sdf_fn, bbox, resolution, chunk=65536, dtype=torch.float32) -> np.ndarray:
    bbox = np.asarray(bbox, dtype=np.float64)
    axes = [np.linspace(bbox[0, a], bbox[1, a], resolution) for a in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)
    vals = np.empty(len(pts))
    with torch.no_grad():
        for s in range(0, len(pts), chunk):
            v = sdf_fn(torch.as_tensor(pts[s:s + chunk], dtype=dtype))
            vals[s:s + chunk] = v.detach().double().cpu().numpy()
    return vals.reshape(resolution, resolution, resolution)


def extract_mesh(sdf_fn, bbox, resolution=128, chunk=65536, dtype=torch.float32) -> Mesh:
    """Marching cubes on a ``resolution``^3 grid over ``bbox``; outward, gradient-aligned normals."""
    from skimage.measure import marching_cubes

    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    bbox = np.asarray(bbox, dtype=np.float64)
    vol = evaluate_grid(sdf_fn, bbox, resolution, chunk, dtype)
    if not (vol.min() < 0.0 < vol.max()):
        return Mesh.empty()
    spacing = tuple((bbox[1] - bbox[0]) / (resolution - 1))
    verts, faces, _, _ = marching_cubes(vol, level=0.0, spacing=spacing)
    verts = verts + bbox[0]
    faces = faces.astype(np.int64)
    normals = np.empty_like(verts)
    for s in range(0, len(verts), chunk):
        p = torch.as_tensor(verts[s:s + chunk], dtype=dtype)
        _, g = sdf_gradient(sdf_fn, p)
        g = g.double().numpy()
        normals[s:s + chunk] = g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
    mesh = Mesh(verts, faces, normals)
    fn, area = mesh.face_normals()
    vn = normals[faces].mean(axis=1)
    if np.sum(area * np.sum(fn * vn, axis=-1)) < 0:
        mesh.faces = faces[:, [0, 2, 1]]
    return mesh
