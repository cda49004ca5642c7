"""Pinhole cameras, rays, projection and Plücker ray embeddings.

Conventions: world is y-up; camera frames follow the OpenCV layout (x right,
y down, z forward). Pixel coordinates are ``(u, v) = (column, row)`` with
integer values at pixel centres, so an image spans ``[-0.5, W - 0.5]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray


@dataclass(frozen=True)
class PluckerPixel:
    color: np.ndarray
    moment: np.ndarray
    direction: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.color, self.moment, self.direction])


@dataclass(frozen=True, eq=False)
class Camera:
    intrinsics: np.ndarray
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray
    width: int
    height: int
    _center: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < K[0, 2] < self.width and 0 < K[1, 2] < self.height):
            raise ValueError("principal point must lie inside the image")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "_center", -R.T @ t)

    @property
    def center(self) -> np.ndarray:
        return self._center

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[2].copy()

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.reshape(-1).tolist(),
            "rotation": self.rotation.reshape(-1).tolist(),
            "translation": self.translation.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            np.asarray(d["intrinsics"], dtype=np.float64).reshape(3, 3),
            np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
            np.asarray(d["translation"], dtype=np.float64),
            d["width"],
            d["height"],
        )

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.intrinsics, other.intrinsics)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


def look_at_camera(eye, target, width, height, focal, up=(0.0, 1.0, 0.0)) -> Camera:
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:  # looking straight along up
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    K = np.array([[focal, 0.0, (width - 1) / 2.0], [0.0, focal, (height - 1) / 2.0], [0.0, 0.0, 1.0]])
    return Camera(K, R, -R @ eye, width, height)


def make_turntable_rig(n_views, radius, elevation=0.0, look_at=(0.0, 0.0, 0.0), *,
                       width=128, height=128, fov_deg=40.0, azimuth_offset=0.0) -> list[Camera]:
    """Cameras on a circle around ``look_at`` at equal azimuth steps of 360/n degrees.

    Azimuth 0 places the camera on the +z side of ``look_at``; ``elevation`` (degrees)
    raises it towards +y. ``fov_deg`` is the vertical field of view.
    """
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    look_at = np.asarray(look_at, dtype=np.float64)
    focal = 0.5 * height / np.tan(np.deg2rad(fov_deg) / 2.0)
    el = np.deg2rad(elevation)
    cams = []
    for i in range(n_views):
        az = np.deg2rad(azimuth_offset + 360.0 * i / n_views)
        offset = radius * np.array([np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
        cams.append(look_at_camera(look_at + offset, look_at, width, height, focal))
    return cams


def camera_azimuth(camera: Camera, look_at=(0.0, 0.0, 0.0)) -> float:
    """Azimuth in degrees [0, 360) of the camera centre about ``look_at``."""
    c = camera.center - np.asarray(look_at, dtype=np.float64)
    return float(np.rad2deg(np.arctan2(c[0], c[2])) % 360.0)


def _check_pixels(camera: Camera, pixels: np.ndarray):
    u, v = pixels[..., 0], pixels[..., 1]
    bad = (u < -0.5) | (u > camera.width - 0.5) | (v < -0.5) | (v > camera.height - 0.5)
    if np.any(bad):
        raise ValueError("pixel outside image bounds")


def pixels_to_rays(camera: Camera, pixels) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``pixel_to_ray``: returns origins (N, 3) and unit directions (N, 3)."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    _check_pixels(camera, pixels)
    K = camera.intrinsics
    x = (pixels[:, 0] - K[0, 2]) / K[0, 0]
    y = (pixels[:, 1] - K[1, 2]) / K[1, 1]
    d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    d = d_cam @ camera.rotation  # R^T applied row-wise
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera.center, d.shape).copy()
    return o, d


def pixel_to_ray(camera: Camera, pixel) -> Ray:
    o, d = pixels_to_rays(camera, np.asarray(pixel, dtype=np.float64)[None])
    return Ray(o[0], d[0])


def pixel_grid(width: int, height: int) -> np.ndarray:
    """All pixel centres in row-major order, shape (H*W, 2) as (u, v)."""
    v, u = np.mgrid[0:height, 0:width]
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=-1).astype(np.float64)


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    return pixels_to_rays(camera, pixel_grid(camera.width, camera.height))


def project_points(camera: Camera, points):
    """Project (N, 3) world points; returns pixels (N, 2) and camera-frame depths (N,).

    Works on numpy arrays or torch tensors (differentiably for the latter).
    Points at non-positive depth yield non-finite pixels; callers mask them.
    """
    if isinstance(points, torch.Tensor):
        R = torch.as_tensor(camera.rotation, dtype=points.dtype, device=points.device)
        t = torch.as_tensor(camera.translation, dtype=points.dtype, device=points.device)
        K = torch.as_tensor(camera.intrinsics, dtype=points.dtype, device=points.device)
        xc = points @ R.T + t
        z = xc[..., 2]
        safe = torch.where(z > 1e-8, z, torch.ones_like(z))
        u = K[0, 0] * xc[..., 0] / safe + K[0, 2]
        v = K[1, 1] * xc[..., 1] / safe + K[1, 2]
        return torch.stack([u, v], dim=-1), z
    points = np.asarray(points, dtype=np.float64)
    xc = points @ camera.rotation.T + camera.translation
    z = xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.intrinsics[0, 0] * xc[..., 0] / z + camera.intrinsics[0, 2]
        v = camera.intrinsics[1, 1] * xc[..., 1] / z + camera.intrinsics[1, 2]
    return np.stack([u, v], axis=-1), z


def project(camera: Camera, point) -> tuple[np.ndarray, float]:
    pix, z = project_points(camera, np.asarray(point, dtype=np.float64)[None])
    if z[0] <= 0:
        raise ValueError("point is behind the camera")
    return pix[0], float(z[0])


def plucker_embed(ray: Ray, color) -> PluckerPixel:
    d = np.asarray(ray.direction, dtype=np.float64)
    o = np.asarray(ray.origin, dtype=np.float64)
    return PluckerPixel(np.asarray(color, dtype=np.float64), np.cross(o, d), d)


def plucker_map(camera: Camera) -> np.ndarray:
    """(H, W, 6) moment and direction channels for every pixel."""
    o, d = camera_rays(camera)
    return np.concatenate([np.cross(o, d), d], axis=-1).reshape(camera.height, camera.width, 6)
