"""The full feed-forward reconstructor and its per-scene conditioning context."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .appearance import BlendNetwork, blend_color
from .backbone import FeaturePyramid, build_input, sample_grid, sample_pyramid
from .cameras import Camera, project_points
from .field import SDFNetwork, encoded_dim, global_feature, positional_encode
from .renderer import Sharpness
from .tokens import CrossViewAttention, TokenSelfAttention, init_tokens, knn_fuse

PARAM_GROUPS = ("backbone", "tokens", "attention", "sdf", "appearance", "sharpness")


@dataclass
class SourceViews:
    images: np.ndarray  # (S, H, W, 3)
    cameras: list[Camera]
    vertices: np.ndarray  # (Q, 3)
    part_labels: np.ndarray  # (Q,)


class Reconstructor(nn.Module):
    def __init__(self, n_vertices: int, cfg_model: dict, generator: torch.Generator | None = None):
        super().__init__()
        m = cfg_model
        self.cfg = dict(m)
        self.backbone = FeaturePyramid(9, m["backbone_channels"])
        feat_dim = self.backbone.out_dim
        self.feat_dim = feat_dim
        self.d_model = m["d_model"]
        self.tokens = nn.Parameter(init_tokens(n_vertices, m["d_model"], m["token_init_std"], generator))
        self.cross_attention = CrossViewAttention(m["d_model"], feat_dim, m["heads"])
        self.self_attention = TokenSelfAttention(feat_dim, m["d_model"], m["heads"], m["n_self_attention"])
        self.pe_bands = m["pe_bands"]
        self.sdf_net = SDFNetwork(
            encoded_dim(m["pe_bands"]), 2 * feat_dim + m["d_model"], m["sdf_hidden"], m["sdf_layers"],
            m["sdf_skip"], m["geo_dim"], m["softplus_beta"], m["init_radius"])
        self.blend = BlendNetwork(feat_dim, m["geo_dim"], m["blend_hidden"], m["view_enc_hidden"])
        self.sharpness = Sharpness(m["init_inv_s"])
        self.knn_k, self.knn_eps = m["knn_k"], m["knn_eps"]
        self.use_tokens = bool(m["use_tokens"])

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "backbone": list(self.backbone.parameters()),
            "tokens": [self.tokens],
            "attention": list(self.cross_attention.parameters()) + list(self.self_attention.parameters()),
            "sdf": list(self.sdf_net.parameters()),
            "appearance": list(self.blend.parameters()),
            "sharpness": list(self.sharpness.parameters()),
        }

    def named_group_state(self) -> dict[str, dict[str, torch.Tensor]]:
        """State dict entries keyed by parameter group, for frozen-group comparisons."""
        prefixes = {
            "backbone": ("backbone.",), "tokens": ("tokens",),
            "attention": ("cross_attention.", "self_attention."), "sdf": ("sdf_net.",),
            "appearance": ("blend.",), "sharpness": ("sharpness.",),
        }
        sd = self.state_dict()
        return {g: {k: v.clone() for k, v in sd.items() if k.startswith(p)} for g, p in prefixes.items()}

    def encode(self, views: SourceViews) -> "SceneContext":
        dtype = self.tokens.dtype
        if len(views.vertices) != self.tokens.shape[0]:
            raise ValueError(f"model has {self.tokens.shape[0]} tokens but scene has {len(views.vertices)} vertices")
        inputs = torch.stack([build_input(img, cam, dtype) for img, cam in zip(views.images, views.cameras)])
        pyramid = self.backbone(inputs.permute(0, 3, 1, 2))
        images = torch.as_tensor(np.asarray(views.images), dtype=dtype).permute(0, 3, 1, 2)
        ctx = SceneContext(self, views.cameras, pyramid, images,
                           torch.as_tensor(views.vertices, dtype=dtype), None)
        if self.use_tokens:
            feats, oob, _ = ctx.sample_views(ctx.vertex_positions)
            agg, _ = self.cross_attention(self.tokens, feats, oob)
            ctx.vertex_features = self.self_attention(agg)
        return ctx


class SceneContext:
    """Everything conditioned on one subject's source views; callable as a renderer field."""

    def __init__(self, model: Reconstructor, cameras, pyramid, images, vertex_positions, vertex_features):
        self.model = model
        self.cameras = list(cameras)
        self.pyramid = pyramid
        self.images = images  # (S, 3, H, W)
        self.vertex_positions = vertex_positions
        self.vertex_features = vertex_features
        dtype = images.dtype
        self.R = torch.stack([torch.as_tensor(c.rotation, dtype=dtype) for c in self.cameras])
        self.t = torch.stack([torch.as_tensor(c.translation, dtype=dtype) for c in self.cameras])
        self.K = torch.stack([torch.as_tensor(c.intrinsics, dtype=dtype) for c in self.cameras])
        self.centers = torch.stack([torch.as_tensor(c.center, dtype=dtype) for c in self.cameras])
        self.width, self.height = self.cameras[0].width, self.cameras[0].height

    def project(self, points: torch.Tensor):
        """(N, 3) -> pixels (S, N, 2), depths (S, N); behind-camera pixels are non-finite."""
        xc = torch.einsum("sij,nj->sni", self.R, points) + self.t[:, None]
        z = xc[..., 2]
        front = z > 1e-6
        safe = torch.where(front, z, torch.ones_like(z))
        u = self.K[:, None, 0, 0] * xc[..., 0] / safe + self.K[:, None, 0, 2]
        v = self.K[:, None, 1, 1] * xc[..., 1] / safe + self.K[:, None, 1, 2]
        pix = torch.stack([u, v], dim=-1)
        pix = torch.where(front[..., None], pix, torch.full_like(pix, float("nan")))
        return pix, z

    def sample_views(self, points: torch.Tensor):
        pix, _ = self.project(points)
        feats, oob = sample_pyramid(self.pyramid, pix, self.width, self.height)
        return feats, oob, pix

    def fused(self, points: torch.Tensor) -> torch.Tensor:
        if self.vertex_features is None:
            return torch.zeros(points.shape[0], self.model.d_model, dtype=points.dtype)
        return knn_fuse(points, self.vertex_positions, self.vertex_features, self.model.knn_k, self.model.knn_eps)

    def geometry(self, points: torch.Tensor):
        feats, oob, pix = self.sample_views(points)
        enc = positional_encode(points, self.model.pe_bands)
        sdf, geo = self.model.sdf_net(enc, global_feature(feats), self.fused(points))
        return sdf, geo, feats, oob, pix

    def sdf(self, points: torch.Tensor) -> torch.Tensor:
        return self.geometry(points)[0]

    def __call__(self, points: torch.Tensor, dirs: torch.Tensor):
        sdf, geo, feats, oob, pix = self.geometry(points)
        src_dirs = points[None] - self.centers[:, None]
        src_dirs = src_dirs / torch.linalg.norm(src_dirs, dim=-1, keepdim=True)
        w = self.model.blend(feats, dirs, src_dirs, geo, oob)
        safe = torch.where(oob[..., None], torch.zeros_like(pix), pix)
        colors = sample_grid(self.images, safe) * (~oob)[..., None].to(points.dtype)
        return sdf, blend_color(w, colors)

    @property
    def inv_s(self) -> torch.Tensor:
        return self.model.sharpness.inv_s


def project_vertex_boxes(camera: Camera, vertices: np.ndarray):
    pix, z = project_points(camera, vertices)
    ok = (z > 0) & (pix[:, 0] >= 0) & (pix[:, 0] <= camera.width - 1) & (pix[:, 1] >= 0) & (pix[:, 1] <= camera.height - 1)
    return pix[ok]
