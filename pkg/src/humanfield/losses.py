"""Training objectives and the loss report."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch

from .field import sdf_gradient


@dataclass
class LossReport:
    iteration: int
    rgb: float
    eikonal: float
    smooth: float
    sds: float
    total: float
    inv_s: float = 0.0
    mask: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def rgb_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over rays of the L1 norm of the colour residual."""
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(predicted.shape)} vs {tuple(target.shape)}")
    return (predicted - target).abs().sum(dim=-1).mean()


def eikonal_loss(gradients: torch.Tensor) -> torch.Tensor:
    return ((torch.linalg.norm(gradients, dim=-1) - 1.0) ** 2).mean()


def mask_loss(opacity: torch.Tensor, mask: torch.Tensor, eps: float = 1e-4) -> torch.Tensor:
    """Binary cross-entropy between accumulated opacity and the foreground mask."""
    if opacity.shape != mask.shape:
        raise ValueError(f"shape mismatch {tuple(opacity.shape)} vs {tuple(mask.shape)}")
    o = opacity.clamp(eps, 1.0 - eps)
    m = mask.to(o.dtype)
    return -(m * torch.log(o) + (1.0 - m) * torch.log1p(-o)).mean()


def smooth_loss(points: torch.Tensor, sdf_fn, eps_std: float = 0.01, generator: torch.Generator | None = None,
                gradients: torch.Tensor | None = None, create_graph: bool = True) -> torch.Tensor:
    """Mean of ||grad s(p) - grad s(p + eps)||^2 with isotropic Gaussian ``eps``.

    ``gradients`` at ``points`` may be passed in when already computed.
    """
    if eps_std <= 0:
        raise ValueError("eps_std must be positive")
    eps = torch.randn(points.shape, generator=generator, dtype=points.dtype) * eps_std
    if gradients is None:
        _, gradients = sdf_gradient(sdf_fn, points.detach(), create_graph=create_graph)
    _, g2 = sdf_gradient(sdf_fn, points.detach() + eps, create_graph=create_graph)
    return ((gradients - g2) ** 2).sum(dim=-1).mean()


LAMBDA_KEYS = ("lambda_rgb", "lambda_sds", "lambda_eik", "lambda_sm", "lambda_mask")


def total_loss(terms: dict, lambdas: dict, iteration: int = 0, phase: str = "train", inv_s: float = 0.0):
    """Weighted objective and its report.

    ``terms`` maps rgb / sds / eikonal / smooth / mask to scalar tensors (or floats);
    the SDS weight is forced to zero outside the ``finetune`` phase. The report
    total is recomputed from the float components, so it matches exactly.
    """
    lam = {k: float(lambdas.get(k, 0.0)) for k in LAMBDA_KEYS}
    if any(v < 0 for v in lam.values()):
        raise ValueError("loss weights must be non-negative")
    if phase != "finetune":
        lam["lambda_sds"] = 0.0
    pairs = (("rgb", "lambda_rgb"), ("sds", "lambda_sds"), ("eikonal", "lambda_eik"), ("smooth", "lambda_sm"),
             ("mask", "lambda_mask"))
    total = 0.0
    for term, key in pairs:
        v = terms.get(term, 0.0)
        if lam[key] != 0.0:
            total = total + lam[key] * v
    vals = {t: float(torch.as_tensor(terms.get(t, 0.0)).detach()) for t, _ in pairs}
    report = LossReport(
        iteration=iteration, rgb=vals["rgb"], eikonal=vals["eikonal"], smooth=vals["smooth"], sds=vals["sds"],
        total=recompute_total(vals, lam), inv_s=float(torch.as_tensor(inv_s).detach()), mask=vals["mask"])
    return total, report


def recompute_total(vals: dict, lam: dict) -> float:
    return (lam["lambda_rgb"] * vals["rgb"] + lam["lambda_sds"] * vals["sds"]
            + lam["lambda_eik"] * vals["eikonal"] + lam["lambda_sm"] * vals["smooth"]
            + lam.get("lambda_mask", 0.0) * vals.get("mask", 0.0))
