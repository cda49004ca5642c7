"""SDF prediction from positional encoding, global view statistics and fused token features."""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@contextmanager
def flush_denormals():
    """Flush subnormal floats to zero while active.

    The steep softplus produces many subnormal values far from the surface,
    which slows CPU arithmetic several-fold.
    """
    torch.set_flush_denormal(True)
    try:
        yield
    finally:
        torch.set_flush_denormal(False)


def positional_encode(p: torch.Tensor, bands: int = 6) -> torch.Tensor:
    """[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)]; dim 3 + 6L."""
    out = [p]
    for k in range(bands):
        arg = (2.0 ** k) * math.pi * p
        out += [torch.sin(arg), torch.cos(arg)]
    return torch.cat(out, dim=-1)


def encoded_dim(bands: int) -> int:
    return 3 + 3 * 2 * bands


def global_feature(view_feats: torch.Tensor) -> torch.Tensor:
    """Mean and population variance over views: (S, N, C) -> (N, 2C).

    Views flagged out-of-bounds arrive as zero vectors and still count.
    """
    mu = view_feats.mean(dim=0)
    var = ((view_feats - mu) ** 2).mean(dim=0)
    return torch.cat([mu, var], dim=-1)


class SDFNetwork(nn.Module):
    """MLP ``(gamma(p), [F_glo, Fus]) -> (sdf, geometry code)`` with sphere initialisation.

    Before training only the raw-position inputs carry weight, so the zero
    level set starts as a sphere of radius ``init_radius`` regardless of the
    feature inputs. The usual random sphere init is only accurate to ~0.3 at
    this width, so the SDF row of the output layer is then refit by ridge
    regression onto ``|p| - init_radius`` over a fixed set of points.
    """

    def __init__(self, encoded_dim=39, feature_dim=288, hidden=256, layers=6, skip=3, geo_dim=64,
                 beta=100.0, init_radius=0.5):
        super().__init__()
        self.encoded_dim, self.feature_dim = encoded_dim, feature_dim
        self.geo_dim, self.beta, self.skip = geo_dim, beta, skip
        in_dim = encoded_dim + feature_dim
        self.in_dim = in_dim
        self.hidden = nn.ModuleList()
        for i in range(layers):
            fan_in = in_dim if i == 0 else hidden + (in_dim if i == skip and i > 0 else 0)
            self.hidden.append(nn.Linear(fan_in, hidden))
        self.out = nn.Linear(hidden, 1 + geo_dim)
        self._geometric_init(init_radius)

    def _geometric_init(self, radius):
        with torch.no_grad():
            for i, lin in enumerate(self.hidden):
                std = math.sqrt(2.0) / math.sqrt(lin.out_features)
                nn.init.normal_(lin.weight, 0.0, std)
                nn.init.zeros_(lin.bias)
                if i == 0:
                    lin.weight[:, 3:] = 0.0
                elif i == self.skip:
                    lin.weight[:, -(self.in_dim - 3):] = 0.0
            h = self.out.in_features
            nn.init.normal_(self.out.weight[:1], math.sqrt(math.pi) / math.sqrt(h), 1e-4)
            self.out.bias[:1] = -radius
            nn.init.normal_(self.out.weight[1:], 0.0, 1.0 / math.sqrt(h))
            nn.init.zeros_(self.out.bias[1:])
            self._fit_sphere(radius)

    def _fit_sphere(self, radius, n=8192, ridge=1e-2, extent=1.6):
        gen = torch.Generator().manual_seed(0)
        d = F.normalize(torch.randn(n, 3, generator=gen, dtype=torch.float64), dim=-1)
        r = extent * torch.rand(n, 1, generator=gen, dtype=torch.float64).sqrt()
        p = (d * r).to(self.out.weight.dtype)
        feats = self._trunk(torch.cat([positional_encode(p, self._bands()), p.new_zeros(n, self.feature_dim)], -1))
        A = torch.cat([feats.double(), torch.ones(n, 1, dtype=torch.float64)], dim=-1)
        y = r[:, 0] - radius
        sol = torch.linalg.solve(A.T @ A + ridge * torch.eye(A.shape[1], dtype=torch.float64), A.T @ y)
        self.out.weight[0] = sol[:-1].to(self.out.weight.dtype)
        self.out.bias[0] = sol[-1].to(self.out.bias.dtype)

    def _bands(self) -> int:
        return (self.encoded_dim - 3) // 6

    def _trunk(self, x0):
        x = x0
        for i, lin in enumerate(self.hidden):
            if i == self.skip and i > 0:
                x = torch.cat([x, x0], dim=-1) / math.sqrt(2.0)
            x = F.softplus(lin(x), beta=self.beta)
        return x

    def forward(self, encoded, global_feat, fused):
        x0 = torch.cat([encoded, global_feat, fused], dim=-1)
        if x0.shape[-1] != self.in_dim:
            raise ValueError(f"SDF network expects input dim {self.in_dim}, got {x0.shape[-1]}")
        y = self.out(self._trunk(x0))
        return y[..., 0], y[..., 1:]


def sdf_forward(net: SDFNetwork, encoded, global_feat, fused):
    return net(encoded, global_feat, fused)


def sdf_gradient(sdf_fn, points: torch.Tensor, create_graph: bool = False):
    """SDF values and exact gradient w.r.t. ``points`` through everything ``sdf_fn`` does."""
    with torch.enable_grad():
        pts = points if points.requires_grad else points.detach().requires_grad_(True)
        s = sdf_fn(pts)
        if isinstance(s, tuple):
            s = s[0]
        (g,) = torch.autograd.grad(s, pts, torch.ones_like(s), create_graph=create_graph)
    return s, g


def finite_difference_gradient(fn, points: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of a numpy scalar field; used as an independent oracle."""
    points = np.asarray(points, dtype=np.float64)
    g = np.zeros_like(points)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        g[:, a] = (fn(points + e) - fn(points - e)) / (2 * h)
    return g
