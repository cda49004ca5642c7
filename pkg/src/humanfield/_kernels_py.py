"""Pure numpy versions of the compiled kernels in ``_kernels_cy``."""

import numpy as np


def knn_indices(points, verts, k, chunk=2048):
    points = np.ascontiguousarray(points, dtype=np.float64)
    verts = np.ascontiguousarray(verts, dtype=np.float64)
    q = verts.shape[0]
    if k < 1 or k > q:
        raise ValueError(f"k must be in [1, {q}], got {k}")
    out = np.empty((points.shape[0], k), dtype=np.int64)
    for start in range(0, points.shape[0], chunk):
        diff = points[start:start + chunk, None, :] - verts[None, :, :]
        # same accumulation order as the compiled loop so ties agree bitwise
        d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        out[start:start + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def capsule_sdf(points, seg_a, seg_b, radii):
    """Per-capsule signed distances, shape (N, C)."""
    pa = points[:, None, :] - seg_a[None]
    ba = (seg_b - seg_a)[None]
    bb = np.sum(ba * ba, axis=-1)
    h = np.divide(np.sum(pa * ba, axis=-1), bb, out=np.zeros(pa.shape[:2]), where=bb > 0)
    h = np.clip(h, 0.0, 1.0)
    return np.linalg.norm(pa - ba * h[..., None], axis=-1) - radii[None]


def sphere_trace_capsules(origins, dirs, seg_a, seg_b, radii, t_far, eps=1e-7, max_steps=512):
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    t = np.zeros(n)
    out = np.full(n, np.inf)
    active = np.arange(n)
    for _ in range(max_steps):
        if active.size == 0:
            break
        p = origins[active] + t[active, None] * dirs[active]
        d = capsule_sdf(p, seg_a, seg_b, radii).min(axis=1)
        hit = d < eps
        out[active[hit]] = t[active[hit]]
        t[active] += np.where(hit, 0.0, d)
        active = active[~hit & (t[active] <= t_far)]
    return out
