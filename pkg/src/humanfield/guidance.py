"""Score distillation against a conditional super-resolution denoiser.

The pretrained diffusion model is abstracted behind ``DenoiserBackend``;
the mock backends here are exact test doubles whose behaviour is known in
closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import GuidanceError


@dataclass(frozen=True)
class GuidanceConfig:
    cfg_weight: float = 7.5
    t_min: float = 0.52
    t_max: float = 0.98
    prompt: str = "Best quality, human, normal map"
    upsample_factor: int = 4
    weighting: str = "constant"
    num_train_timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def __post_init__(self):
        if not (0 < self.t_min <= self.t_max <= 1):
            raise ValueError("require 0 < t_min <= t_max <= 1")
        if self.cfg_weight < 0:
            raise ValueError("cfg_weight must be >= 0")
        if self.upsample_factor < 1:
            raise ValueError("upsample_factor must be >= 1")
        if self.weighting not in ("constant", "one_minus_alphabar"):
            raise ValueError(f"unknown weighting {self.weighting!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "GuidanceConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class NoiseSchedule:
    """Linear-beta DDPM schedule; ``alphabar(t)`` for ``t`` in 1..T."""

    def __init__(self, num_train_timesteps=1000, beta_start=1e-4, beta_end=2e-2):
        self.T = int(num_train_timesteps)
        self.betas = np.linspace(beta_start, beta_end, self.T, dtype=np.float64)
        self.alphas_cumprod = np.cumprod(1.0 - self.betas)

    @classmethod
    def from_config(cls, cfg: GuidanceConfig) -> "NoiseSchedule":
        return cls(cfg.num_train_timesteps, cfg.beta_start, cfg.beta_end)

    def alphabar(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return float(self.alphas_cumprod[t - 1])


def add_noise_alphabar(z0, alphabar: float, eps):
    return math.sqrt(alphabar) * z0 + math.sqrt(1.0 - alphabar) * eps


def add_noise(z0, t: int, eps, schedule: NoiseSchedule):
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    if eps.shape != z0.shape:
        raise ValueError("noise and latent shapes differ")
    return add_noise_alphabar(z0, schedule.alphabar(t), eps)


def cfg_combine(eps_cond, eps_uncond, weight: float):
    return eps_uncond + weight * (eps_cond - eps_uncond)


def timestep_range(cfg: GuidanceConfig) -> tuple[int, int]:
    lo = math.ceil(round(cfg.t_min * cfg.num_train_timesteps, 9))
    hi = math.floor(round(cfg.t_max * cfg.num_train_timesteps, 9))
    return max(lo, 1), min(hi, cfg.num_train_timesteps)


def sample_timestep(cfg: GuidanceConfig, rng: np.random.Generator) -> int:
    lo, hi = timestep_range(cfg)
    return int(rng.integers(lo, hi + 1))


class DenoiserBackend:
    """Interface of the frozen diffusion prior.

    ``encode`` maps an image batch (B, 3, H, W) in [0, 1] to latents;
    ``predict_noise`` returns the noise estimate for ``z_t`` at step ``t``
    given a text prompt (``""`` selects the unconditional branch) and the
    low-resolution conditioning image.
    """

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def predict_noise(self, z_t, t: int, text: str, low_res: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def sample_noise(self, shape, generator: torch.Generator | None, dtype=torch.float32) -> torch.Tensor:
        return torch.randn(shape, generator=generator, dtype=dtype)


class _IdentityEncoder(DenoiserBackend):
    def encode(self, image):
        return image


class PerfectDenoiser(_IdentityEncoder):
    """Owns the noise stream, so it always predicts the exact noise that was added."""

    def __init__(self):
        self._last = None

    def sample_noise(self, shape, generator, dtype=torch.float32):
        self._last = super().sample_noise(shape, generator, dtype)
        return self._last

    def predict_noise(self, z_t, t, text, low_res):
        if self._last is None or self._last.shape != z_t.shape:
            raise GuidanceError("perfect mock used without its own noise stream")
        return self._last.clone()


class BiasedDenoiser(PerfectDenoiser):
    """Exact noise plus a fixed offset (``bias_uncond`` for the unconditional branch)."""

    def __init__(self, bias=0.0, bias_uncond=None):
        super().__init__()
        self.bias = bias
        self.bias_uncond = bias if bias_uncond is None else bias_uncond

    def predict_noise(self, z_t, t, text, low_res):
        g = self.bias if text else self.bias_uncond
        return super().predict_noise(z_t, t, text, low_res) + torch.as_tensor(g, dtype=z_t.dtype)


class PullToTargetDenoiser(PerfectDenoiser):
    """Predicts noise as if the clean latent were ``target``: eps + k (z_t - z_t(target)).

    The score-distillation update then moves the rendered latent towards the
    target image.
    """

    def __init__(self, target: torch.Tensor, schedule: NoiseSchedule, k: float = 1.0):
        super().__init__()
        self.target = target.detach()
        self.schedule = schedule
        self.k = k

    def predict_noise(self, z_t, t, text, low_res):
        eps = super().predict_noise(z_t, t, text, low_res)
        target = self.target.to(z_t.dtype)
        if target.shape != z_t.shape:
            target = F.interpolate(target, size=z_t.shape[-2:], mode="bilinear", align_corners=False)
        z_t_target = add_noise_alphabar(target, self.schedule.alphabar(t), eps)
        return eps + self.k * (z_t - z_t_target)


def mock_backends(target: torch.Tensor | None = None, schedule: NoiseSchedule | None = None,
                  bias=0.5, pull=1.0) -> dict[str, DenoiserBackend]:
    out = {"perfect": PerfectDenoiser(), "biased": BiasedDenoiser(bias)}
    if target is not None:
        out["pull_to_target"] = PullToTargetDenoiser(target, schedule or NoiseSchedule(), pull)
    return out


def upsample(image: torch.Tensor, factor: int) -> torch.Tensor:
    if factor == 1:
        return image
    return F.interpolate(image, scale_factor=factor, mode="bilinear", align_corners=False)


def sds_loss_and_grad(normal_map: torch.Tensor, backend: DenoiserBackend, cfg: GuidanceConfig,
                      rng: np.random.Generator, noise_generator: torch.Generator | None = None,
                      schedule: NoiseSchedule | None = None, t: int | None = None):
    """Score-distillation surrogate for an RGB-encoded normal map.

    ``normal_map`` is (H, W, 3) or (B, H, W, 3) and differentiable. Returns
    ``(surrogate, info)`` where the surrogate's gradient w.r.t. the latent is
    ``w(t) (eps_hat - eps) sqrt(abar_t)`` exactly; ``info`` holds ``t``,
    ``alphabar``, ``grad_latent`` and the noise predictions.
    """
    schedule = schedule or NoiseSchedule.from_config(cfg)
    if not torch.isfinite(normal_map).all():
        raise GuidanceError("normal map contains non-finite values")
    n = normal_map if normal_map.dim() == 4 else normal_map[None]
    n = n.permute(0, 3, 1, 2)
    low_res = n.detach()
    z0 = backend.encode(upsample(n, cfg.upsample_factor))
    if t is None:
        t = sample_timestep(cfg, rng)
    abar = schedule.alphabar(t)
    eps = backend.sample_noise(z0.shape, noise_generator, z0.dtype)
    with torch.no_grad():
        z_t = add_noise_alphabar(z0.detach(), abar, eps)
        try:
            eps_cond = backend.predict_noise(z_t, t, cfg.prompt, low_res)
            eps_uncond = backend.predict_noise(z_t, t, "", low_res)
        except GuidanceError:
            raise
        except Exception as exc:  # noqa: BLE001 - surface any backend failure uniformly
            raise GuidanceError(f"guidance backend failed: {exc}") from exc
        eps_hat = cfg_combine(eps_cond, eps_uncond, cfg.cfg_weight)
        if not torch.isfinite(eps_hat).all():
            raise GuidanceError("guidance produced non-finite noise predictions")
        w = 1.0 if cfg.weighting == "constant" else 1.0 - abar
        grad = w * (eps_hat - eps) * math.sqrt(abar)
    target = (z0 - grad).detach()
    surrogate = 0.5 * ((z0 - target) ** 2).sum()
    info = {"t": t, "alphabar": abar, "grad_latent": grad, "eps": eps, "eps_hat": eps_hat, "z_t": z_t}
    return surrogate, info
