"""Per-view 9-channel Plücker+RGB input and a small multi-resolution conv pyramid."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .cameras import Camera, plucker_map


def build_input(image, camera: Camera, dtype=torch.float32) -> torch.Tensor:
    """(H, W, 9) map of (colour, o x d, d) per pixel."""
    image = torch.as_tensor(np.asarray(image), dtype=dtype)
    if image.shape != (camera.height, camera.width, 3):
        raise ValueError(f"image shape {tuple(image.shape)} does not match camera {camera.height}x{camera.width}")
    return torch.cat([image, torch.as_tensor(plucker_map(camera), dtype=dtype)], dim=-1)


class FeaturePyramid(nn.Module):
    """Strided conv pyramid; level ``l`` has stride ``2**l`` and node ``j`` sits over input pixel ``2**l * j``."""

    def __init__(self, in_channels=9, channels=(16, 32, 64)):
        super().__init__()
        self.channels = tuple(channels)
        self.levels = nn.ModuleList()
        prev = in_channels
        for i, c in enumerate(self.channels):
            self.levels.append(nn.Sequential(
                nn.Conv2d(prev, c, 3, stride=1 if i == 0 else 2, padding=1),
                nn.SiLU(),
                nn.Conv2d(c, c, 3, padding=1),
                nn.SiLU(),
            ))
            prev = c

    @property
    def out_dim(self) -> int:
        return sum(self.channels)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """(S, 9, H, W) or (H, W, 9) input -> list of (S, C_l, H_l, W_l)."""
        if x.dim() == 3:
            x = x.permute(2, 0, 1)[None]
        feats = []
        for level in self.levels:
            x = level(x)
            feats.append(x)
        return feats


def out_of_bounds(pixels: torch.Tensor, width: int, height: int) -> torch.Tensor:
    u, v = pixels[..., 0], pixels[..., 1]
    inside = (u >= -0.5) & (u <= width - 0.5) & (v >= -0.5) & (v <= height - 0.5)
    return ~(inside & torch.isfinite(u) & torch.isfinite(v))


def sample_grid(grid: torch.Tensor, pixels: torch.Tensor) -> torch.Tensor:
    """Bilinear lookup of (S, C, H, W) at (S, N, 2) node coordinates -> (S, N, C).

    Coordinates are clamped to the border; differentiable in both arguments
    (including second order, which the Eikonal terms need).
    """
    S, C, H, W = grid.shape
    x = 2.0 * pixels[..., 0] / max(W - 1, 1) - 1.0
    y = 2.0 * pixels[..., 1] / max(H - 1, 1) - 1.0
    g = torch.stack([x, y], dim=-1)[:, :, None, :]
    out = F.grid_sample(grid, g, mode="bilinear", padding_mode="border", align_corners=True)
    return out[..., 0].permute(0, 2, 1)


def sample_pyramid(pyramid: list[torch.Tensor], pixels: torch.Tensor, width: int, height: int):
    """Sample every level at level-0 ``pixels`` (S, N, 2); concatenate per-level vectors.

    Returns features (S, N, sum C) and an out-of-bounds flag (S, N); flagged
    samples (outside the image or non-finite, e.g. behind the camera) are zero.
    """
    oob = out_of_bounds(pixels, width, height)
    safe = torch.where(oob[..., None], torch.zeros_like(pixels), pixels)
    out = []
    for level, grid in enumerate(pyramid):
        out.append(sample_grid(grid, safe / (2 ** level)))
    feats = torch.cat(out, dim=-1)
    return feats * (~oob)[..., None].to(feats.dtype), oob


def sample_feature(pyramid: list[torch.Tensor], pixel, width: int, height: int):
    """Single-view, single-pixel convenience wrapper around ``sample_pyramid``."""
    p = torch.as_tensor(pixel, dtype=pyramid[0].dtype).reshape(1, 1, 2)
    feats, oob = sample_pyramid([g[:1] for g in pyramid], p, width, height)
    return feats[0, 0], bool(oob[0, 0])
