"""Triangle mesh container and area-weighted surface sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    normals: np.ndarray | None = None  # (V, 3) per-vertex

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def face_normals(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit face normals (right-hand winding) and face areas."""
        v = self.vertices[self.faces]
        cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        norm = np.linalg.norm(cross, axis=-1)
        n = np.divide(cross, norm[:, None], out=np.zeros_like(cross), where=norm[:, None] > 0)
        return n, 0.5 * norm

    def translated(self, offset) -> "Mesh":
        return Mesh(self.vertices + np.asarray(offset), self.faces.copy(),
                    None if self.normals is None else self.normals.copy())

    def edge_face_counts(self) -> np.ndarray:
        """How many faces share each undirected edge."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts


def sample_surface(mesh: Mesh, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``n`` points uniformly by area with the normal of the face they came from.

    Zero-area faces are never selected.
    """
    fn, area = mesh.face_normals()
    total = area.sum()
    if len(mesh.faces) == 0 or total <= 0:
        raise ValueError("mesh has no non-degenerate faces")
    face = rng.choice(len(area), size=n, p=area / total)
    r1 = np.sqrt(rng.uniform(size=n))
    r2 = rng.uniform(size=n)
    v = mesh.vertices[mesh.faces[face]]
    pts = (1 - r1)[:, None] * v[:, 0] + (r1 * (1 - r2))[:, None] * v[:, 1] + (r1 * r2)[:, None] * v[:, 2]
    return pts, fn[face]
