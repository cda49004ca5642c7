"""Surface metrics (Chamfer distance, normal consistency) and image metrics (PSNR, SSIM)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from skimage.metrics import structural_similarity

from .errors import EvaluationError
from .mesh import Mesh, sample_surface


def _samples(mesh: Mesh, n: int, rng: np.random.Generator):
    if mesh.is_empty:
        raise EvaluationError("cannot evaluate an empty mesh")
    try:
        return sample_surface(mesh, n, rng)
    except ValueError as exc:
        raise EvaluationError(str(exc)) from exc


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def surface_metrics(mesh_a: Mesh, mesh_b: Mesh, n_samples: int = 10000, rng=0) -> tuple[float, float]:
    """(chamfer, normal consistency) from one shared set of area-uniform samples."""
    rng = _rng(rng)
    pa, na = _samples(mesh_a, n_samples, rng)
    pb, nb = _samples(mesh_b, n_samples, rng)
    d_ab, i_ab = cKDTree(pb).query(pa)
    d_ba, i_ba = cKDTree(pa).query(pb)
    cd = 0.5 * (d_ab.mean() + d_ba.mean())
    cos_ab = np.abs((na * nb[i_ab]).sum(-1))
    cos_ba = np.abs((nb * na[i_ba]).sum(-1))
    nc = 0.5 * (cos_ab.mean() + cos_ba.mean())
    return float(cd), float(nc)


def chamfer_distance(mesh_a: Mesh, mesh_b: Mesh, n_samples: int = 10000, rng=0) -> float:
    """Half the sum of the two directed mean nearest-neighbour distances, in scene units."""
    return surface_metrics(mesh_a, mesh_b, n_samples, rng)[0]


def normal_consistency(mesh_a: Mesh, mesh_b: Mesh, n_samples: int = 10000, rng=0) -> float:
    """Symmetrised mean |cos| between face normals of nearest sample pairs."""
    return surface_metrics(mesh_a, mesh_b, n_samples, rng)[1]


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(img_a, img_b) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images give +inf."""
    a, b = _check_pair(img_a, img_b)
    mse = float(((a - b) ** 2).mean())
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def ssim(img_a, img_b, win: int = 11, sigma: float = 1.5) -> float:
    """Gaussian-windowed SSIM on luminance, averaged over fully interior windows."""
    a, b = _check_pair(img_a, img_b)
    a, b = luminance(a), luminance(b)
    if min(a.shape) < win:
        raise ValueError(f"image {a.shape} smaller than the {win}x{win} window")
    return float(structural_similarity(a, b, win_size=win, data_range=1.0, gaussian_weights=True, sigma=sigma,
                                       use_sample_covariance=False))


@dataclass
class EvalReport:
    chamfer: float
    normal_consistency: float
    psnr: float
    ssim: float
    units: str = "scene"
    per_scene: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.chamfer >= 0:
            raise ValueError("chamfer must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))
