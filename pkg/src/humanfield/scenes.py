"""Analytic synthetic scenes used as stand-ins for scanned humans.

Every scene is a union of capsules (a sphere is a capsule with coincident
endpoints). The union uses a hard ``min`` so the field keeps unit gradient
norm almost everywhere, which the Eikonal checks rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import kernels
from .cameras import Camera, camera_rays

PART_NAMES = ("head", "torso", "left_arm", "right_arm", "left_leg", "right_leg")
SCENE_KINDS = ("sphere", "capsule_person")


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    kind: str
    seed: int
    seg_a: np.ndarray  # (C, 3)
    seg_b: np.ndarray  # (C, 3)
    radii: np.ndarray  # (C,)
    capsule_parts: np.ndarray  # (C,) part id per capsule
    tex_freq: np.ndarray  # (3, 3) one frequency vector per colour channel
    tex_phase: np.ndarray  # (3,)
    vertices: np.ndarray  # (Q, 3) proxy vertices
    part_labels: np.ndarray  # (Q,)
    bbox: np.ndarray  # (2, 3) min / max corners

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bbox[1] - self.bbox[0]))

    def sdf(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.empty(len(points))
        for s in range(0, len(points), 65536):
            out[s:s + 65536] = kernels.capsule_sdf(points[s:s + 65536], self.seg_a, self.seg_b, self.radii).min(axis=1)
        return out

    def sdf_torch(self, points: torch.Tensor) -> torch.Tensor:
        a = torch.as_tensor(self.seg_a, dtype=points.dtype, device=points.device)
        b = torch.as_tensor(self.seg_b, dtype=points.dtype, device=points.device)
        r = torch.as_tensor(self.radii, dtype=points.dtype, device=points.device)
        pa = points[..., None, :] - a
        ba = b - a
        bb = (ba * ba).sum(-1)
        h = torch.where(bb > 0, (pa * ba).sum(-1) / torch.where(bb > 0, bb, torch.ones_like(bb)), torch.zeros_like(bb))
        h = h.clamp(0.0, 1.0)
        d = torch.linalg.norm(pa - ba * h[..., None], dim=-1) - r
        return d.min(dim=-1).values

    def normals(self, points) -> np.ndarray:
        """Analytic unit gradient of the SDF (gradient of the active capsule)."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        d = kernels.capsule_sdf(points, self.seg_a, self.seg_b, self.radii)
        j = d.argmin(axis=1)
        a, b = self.seg_a[j], self.seg_b[j]
        ba = b - a
        bb = np.sum(ba * ba, axis=-1)
        h = np.divide(np.sum((points - a) * ba, axis=-1), bb, out=np.zeros(len(points)), where=bb > 0)
        closest = a + ba * np.clip(h, 0, 1)[:, None]
        n = points - closest
        return n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)

    def texture(self, points):
        """Smooth procedural RGB in [0.2, 0.9]; numpy or torch input."""
        if isinstance(points, torch.Tensor):
            f = torch.as_tensor(self.tex_freq, dtype=points.dtype, device=points.device)
            ph = torch.as_tensor(self.tex_phase, dtype=points.dtype, device=points.device)
            return 0.55 + 0.35 * torch.sin(points @ f.T + ph)
        points = np.asarray(points, dtype=np.float64)
        return 0.55 + 0.35 * np.sin(points @ self.tex_freq.T + self.tex_phase)

    def part_vertices(self, part: int) -> np.ndarray:
        return self.vertices[self.part_labels == part]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed}


def _capsule_person_layout(rng: np.random.Generator):
    s = rng.uniform(0.96, 1.04)
    arm_angle = np.deg2rad(rng.uniform(20.0, 32.0))
    leg_spread = rng.uniform(0.0, 0.04)
    arm_fwd = rng.uniform(-0.08, 0.08, size=2)
    caps = []  # (a, b, r, part)
    caps.append(((0, -0.15, 0), (0, 0.38, 0), 0.16, 1))  # torso
    caps.append(((0, 0.45, 0), (0, 0.62, 0), 0.05, 0))  # neck
    caps.append(((0, 0.70, 0), (0, 0.74, 0), 0.11, 0))  # head
    for side, part, fwd in ((1, 2, arm_fwd[0]), (-1, 3, arm_fwd[1])):
        start = np.array([0.17 * side, 0.40, 0.0])
        direction = np.array([np.sin(arm_angle) * side, -np.cos(arm_angle), fwd])
        direction /= np.linalg.norm(direction)
        caps.append((start, start + 0.6 * direction, 0.055, part))
    for side, part in ((1, 4), (-1, 5)):
        caps.append(((0.09 * side, -0.15, 0), ((0.11 + leg_spread) * side, -0.82, 0), 0.075, part))
    seg_a = np.array([c[0] for c in caps], dtype=np.float64) * s
    seg_b = np.array([c[1] for c in caps], dtype=np.float64) * s
    radii = np.array([c[2] for c in caps], dtype=np.float64) * s
    parts = np.array([c[3] for c in caps], dtype=np.int64)
    return seg_a, seg_b, radii, parts


def _sample_capsule_surface(rng, a, b, r, n):
    ba = b - a
    length = np.linalg.norm(ba)
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    if length < 1e-12:
        return a + r * u
    axis = ba / length
    cyl_area = 2 * np.pi * r * length
    on_cyl = rng.uniform(size=n) < cyl_area / (cyl_area + 4 * np.pi * r * r)
    # caps: hemisphere facing away from the segment
    cap_pts = np.where((u @ axis)[:, None] > 0, b, a) + r * u
    radial = u - (u @ axis)[:, None] * axis
    radial /= np.maximum(np.linalg.norm(radial, axis=-1, keepdims=True), 1e-12)
    cyl_pts = a + rng.uniform(size=(n, 1)) * ba + r * radial
    return np.where(on_cyl[:, None], cyl_pts, cap_pts)


def _sample_union_surface(rng, seg_a, seg_b, radii, parts, n):
    lengths = np.linalg.norm(seg_b - seg_a, axis=-1)
    areas = 2 * np.pi * radii * lengths + 4 * np.pi * radii ** 2
    pts, labels = [], []
    count = 0
    while count < n:
        which = rng.choice(len(radii), size=2 * n, p=areas / areas.sum())
        for c in range(len(radii)):
            m = int(np.sum(which == c))
            if m == 0:
                continue
            p = _sample_capsule_surface(rng, seg_a[c], seg_b[c], radii[c], m)
            others = [j for j in range(len(radii)) if j != c]
            if others:
                d = kernels.capsule_sdf(p, seg_a[others], seg_b[others], radii[others]).min(axis=1)
                p = p[d >= 0]
            pts.append(p)
            labels.append(np.full(len(p), parts[c]))
            count += len(p)
    keep = rng.permutation(count)[:n]
    return np.concatenate(pts)[keep], np.concatenate(labels)[keep]


def make_synthetic_scene(kind: str = "capsule_person", seed: int = 0, *, n_vertices: int = 1024,
                         vertex_jitter: float = 0.01) -> SyntheticScene:
    """Deterministic analytic scene with textured surface and labelled proxy vertices.

    ``vertex_jitter`` offsets proxy vertices along the surface normal (clipped to
    twice its value) to mimic an imperfect body-model fit.
    """
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "sphere":
        seg_a = np.zeros((1, 3))
        seg_b = np.zeros((1, 3))
        radii = np.ones(1)
        parts = np.zeros(1, dtype=np.int64)
    else:
        seg_a, seg_b, radii, parts = _capsule_person_layout(rng)
    freq_dirs = rng.normal(size=(3, 3))
    freq_dirs /= np.linalg.norm(freq_dirs, axis=-1, keepdims=True)
    tex_freq = freq_dirs * rng.uniform(3.0, 6.0, size=(3, 1))
    tex_phase = rng.uniform(0, 2 * np.pi, size=3)

    verts, labels = _sample_union_surface(rng, seg_a, seg_b, radii, parts, n_vertices)
    if kind == "sphere":
        # six parts from the dominant signed axis
        ax = np.abs(verts).argmax(axis=1)
        sign = (verts[np.arange(len(verts)), ax] < 0).astype(np.int64)
        labels = ax * 2 + sign
    if vertex_jitter > 0:
        tmp = SyntheticScene(kind, seed, seg_a, seg_b, radii, parts, tex_freq, tex_phase, verts, labels, np.zeros((2, 3)))
        offs = np.clip(rng.normal(scale=vertex_jitter, size=len(verts)), -2 * vertex_jitter, 2 * vertex_jitter)
        verts = verts + offs[:, None] * tmp.normals(verts)
    # union of the analytic surface's box and the proxy vertices' box, dilated by 10%
    lo = np.minimum(verts.min(axis=0), (np.minimum(seg_a, seg_b) - radii[:, None]).min(axis=0))
    hi = np.maximum(verts.max(axis=0), (np.maximum(seg_a, seg_b) + radii[:, None]).max(axis=0))
    centre, half = (lo + hi) / 2, (hi - lo) / 2 * 1.1
    bbox = np.stack([centre - half, centre + half])
    return SyntheticScene(kind, int(seed), seg_a, seg_b, radii, parts, tex_freq, tex_phase, verts, labels, bbox)


@dataclass
class ReferenceView:
    image: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W) ray distance, 0 on background
    normals: np.ndarray  # (H, W, 3) world-frame unit normals, 0 on background
    mask: np.ndarray  # (H, W) bool


def render_reference(scene: SyntheticScene, camera: Camera) -> ReferenceView:
    """Exact sphere-traced render of the analytic scene; background is black."""
    o, d = camera_rays(camera)
    t_far = np.linalg.norm(camera.center) + 2.0 * scene.diagonal
    t = kernels.sphere_trace_capsules(o, d, scene.seg_a, scene.seg_b, scene.radii, t_far)
    hit = np.isfinite(t)
    H, W = camera.height, camera.width
    image = np.zeros((H * W, 3))
    normals = np.zeros((H * W, 3))
    depth = np.zeros(H * W)
    if hit.any():
        p = o[hit] + t[hit, None] * d[hit]
        image[hit] = scene.texture(p)
        normals[hit] = scene.normals(p)
        depth[hit] = t[hit]
    return ReferenceView(image.reshape(H, W, 3), depth.reshape(H, W), normals.reshape(H, W, 3), hit.reshape(H, W))


def normals_to_rgb(normals_world: np.ndarray, camera: Camera) -> np.ndarray:
    """World normals -> view-space RGB via (n + 1) / 2, +z pointing at the viewer.

    Zero normals (background) map to mid-grey.
    """
    n_cam = normals_world @ camera.rotation.T
    n_view = n_cam * np.array([1.0, -1.0, -1.0])
    return (n_view + 1.0) / 2.0
