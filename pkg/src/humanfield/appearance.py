"""Colour by blending projected source-view colours with learned per-view weights."""

from __future__ import annotations

import torch
import torch.nn as nn


class ViewDiffEncoder(nn.Module):
    """Two-layer MLP lifting ``d - d_s`` to the sampled-feature width."""

    def __init__(self, out_dim=112, hidden=64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(3, hidden), nn.GELU(), nn.Linear(hidden, out_dim))

    def forward(self, d, d_s):
        return self.net(d - d_s)


def encode_view_diff(encoder: ViewDiffEncoder, d, d_s):
    return encoder(d, d_s)


class BlendNetwork(nn.Module):
    """Shared per-view scorer over ``[F_s + Enc(d - d_s), Z_geo]``; softmax over views."""

    def __init__(self, feat_dim=112, geo_dim=64, hidden=128, enc_hidden=64):
        super().__init__()
        self.encoder = ViewDiffEncoder(feat_dim, enc_hidden)
        self.score = nn.Sequential(
            nn.Linear(feat_dim + geo_dim, hidden), nn.GELU(),
            nn.Linear(hidden, hidden), nn.GELU(),
            nn.Linear(hidden, 1),
        )

    def scores(self, view_feats, query_dirs, source_dirs, geo):
        """(S, N, F), (N, 3), (S, N, 3), (N, G) -> (S, N)."""
        f_plus = view_feats + self.encoder(query_dirs[None], source_dirs)
        geo = geo[None].expand(view_feats.shape[0], -1, -1)
        return self.score(torch.cat([f_plus, geo], dim=-1))[..., 0]

    def forward(self, view_feats, query_dirs, source_dirs, geo, oob=None):
        return blend_weights(self.scores(view_feats, query_dirs, source_dirs, geo), oob)


def blend_weights(scores: torch.Tensor, oob: torch.Tensor | None = None) -> torch.Tensor:
    """Softmax over the view axis (dim 0); excluded views get weight 0.

    A point that no view sees gets all-zero weights (black).
    """
    if oob is None:
        return torch.softmax(scores, dim=0)
    none = oob.all(dim=0, keepdim=True)
    s = scores.masked_fill(oob, float("-inf")).masked_fill(none, 0.0)
    return torch.softmax(s, dim=0).masked_fill(none, 0.0)


def blend_color(weights: torch.Tensor, colors: torch.Tensor) -> torch.Tensor:
    """sum_s w_s c_s; ``weights`` (S, ...) and ``colors`` (S, ..., 3)."""
    return (weights[..., None] * colors).sum(dim=0)
