"""Learnable per-vertex tokens: cross-view aggregation, token self-attention, KNN fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from . import kernels


@dataclass
class TokenSet:
    tokens: torch.Tensor  # (Q, d)
    vertex_positions: torch.Tensor  # (Q, 3)
    part_labels: torch.Tensor  # (Q,)


def mlp(in_dim, hidden, out_dim, act=nn.GELU):
    return nn.Sequential(nn.Linear(in_dim, hidden), act(), nn.Linear(hidden, out_dim))


class CrossViewAttention(nn.Module):
    """Tokens query the S per-view features of their own vertex.

    Per head ``h`` the weights are a softmax over views of
    ``L_q(T_q) . L_k(F_s(p_q)) / sqrt(d_model)`` restricted to the head's
    slice, and the output is the weighted sum of the raw sampled features
    (head ``h`` owns the ``h``-th chunk of the feature channels).
    """

    def __init__(self, d_model=64, feat_dim=112, heads=4):
        super().__init__()
        if d_model % heads or feat_dim % heads:
            raise ValueError("d_model and feat_dim must be divisible by heads")
        self.d_model, self.feat_dim, self.heads = d_model, feat_dim, heads
        self.query = mlp(d_model, d_model, d_model)
        self.key = mlp(feat_dim, d_model, d_model)

    def logits(self, tokens: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
        """(Q, d), (S, Q, F) -> (Q, H, S)."""
        S, Q, _ = feats.shape
        q = self.query(tokens).view(Q, self.heads, -1)
        k = self.key(feats).view(S, Q, self.heads, -1)
        return torch.einsum("qhc,sqhc->qhs", q, k) / math.sqrt(self.d_model)

    def forward(self, tokens, feats, oob=None):
        if tokens.shape[0] != feats.shape[1]:
            raise ValueError(f"{tokens.shape[0]} tokens but features for {feats.shape[1]} vertices")
        return attend_views(self.logits(tokens, feats), feats, oob, self.heads)


def attend_views(logits: torch.Tensor, feats: torch.Tensor, oob: torch.Tensor | None, heads: int):
    """Masked softmax over views and weighted sum of raw features.

    ``logits`` (Q, H, S); ``feats`` (S, Q, F); ``oob`` (S, Q) excludes views.
    Vertices with every view excluded get zero weights and a zero output.
    """
    S, Q, F = feats.shape
    if oob is None:
        oob = torch.zeros(S, Q, dtype=torch.bool, device=feats.device)
    mask = oob.T[:, None, :].expand_as(logits)  # (Q, H, S)
    none_visible = mask.all(dim=-1, keepdim=True)
    logits = logits.masked_fill(mask, float("-inf")).masked_fill(none_visible, 0.0)
    w = torch.softmax(logits, dim=-1).masked_fill(none_visible, 0.0)
    chunks = feats.view(S, Q, heads, F // heads)
    out = torch.einsum("qhs,sqhc->qhc", w, chunks).reshape(Q, F)
    return out, w


def cross_view_aggregate(attention: CrossViewAttention, tokens, per_view_vertex_feats, oob_flags=None):
    return attention(tokens, per_view_vertex_feats, oob_flags)


class SelfAttentionBlock(nn.Module):
    def __init__(self, d_model, heads, ff_mult=2):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = mlp(d_model, ff_mult * d_model, d_model)

    def forward(self, x):
        Q, d = x.shape
        q, k, v = self.qkv(self.norm1(x)).view(Q, 3, self.heads, d // self.heads).permute(1, 2, 0, 3).unbind(0)
        att = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(d // self.heads), dim=-1)  # (H, Q, Q)
        x = x + self.proj((att @ v).transpose(0, 1).reshape(Q, d))
        return x + self.ff(self.norm2(x))


class TokenSelfAttention(nn.Module):
    """Input projection to ``d_model`` followed by pre-norm transformer blocks over tokens."""

    def __init__(self, in_dim, d_model=64, heads=4, n_blocks=2):
        super().__init__()
        self.in_proj = nn.Linear(in_dim, d_model) if in_dim != d_model else nn.Identity()
        self.blocks = nn.ModuleList(SelfAttentionBlock(d_model, heads) for _ in range(n_blocks))
        self.norm = nn.LayerNorm(d_model)

    def forward(self, x):
        x = self.in_proj(x)
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


def token_self_attention(module: TokenSelfAttention, features: torch.Tensor) -> torch.Tensor:
    return module(features)


def knn_weights(points: torch.Tensor, vertex_positions: torch.Tensor, k: int, eps: float = 1e-4):
    """Neighbour indices (N, k) and softmax-of-inverse-distance weights (N, k).

    Neighbour search is non-differentiable; distances to the selected vertices
    are recomputed in torch so the weights carry gradients w.r.t. ``points``.
    """
    Q = vertex_positions.shape[0]
    if k > Q:
        raise ValueError(f"K={k} exceeds the number of vertices {Q}")
    idx_np = kernels.knn_indices(points.detach().cpu().numpy(), vertex_positions.detach().cpu().numpy(), k)
    idx = torch.from_numpy(idx_np).to(points.device)
    diff = points[:, None, :] - vertex_positions[idx]
    dist = torch.sqrt((diff * diff).sum(-1) + 1e-12)
    return idx, torch.softmax(1.0 / (dist + eps), dim=-1)


def knn_fuse(points, vertex_positions, features, k=4, eps=1e-4, return_weights=False):
    """Fused feature at each point: sum_k w_k F_k over its K nearest vertices."""
    single = points.dim() == 1
    points = points.reshape(-1, 3)
    idx, w = knn_weights(points, vertex_positions, k, eps)
    out = (w[..., None] * features[idx]).sum(1)
    if single:
        out = out[0]
    return (out, idx, w) if return_weights else out


def init_tokens(n_vertices: int, d_model: int, std: float = 0.02, generator: torch.Generator | None = None):
    return torch.randn(n_vertices, d_model, generator=generator) * std

