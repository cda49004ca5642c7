"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The compiled extension is used when it was built at install time. Set
``HUMANFIELD_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("HUMANFIELD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_cy as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


def knn_indices(points, verts, k):
    """Indices (N, k) of the nearest vertices, ties broken by lower index."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    verts = np.ascontiguousarray(verts, dtype=np.float64).reshape(-1, 3)
    return _impl.knn_indices(points, verts, int(k))


def sphere_trace_capsules(origins, dirs, seg_a, seg_b, radii, t_far, eps=1e-7, max_steps=512):
    """First-hit ray distance against a union of capsules (``inf`` where missed)."""
    return _impl.sphere_trace_capsules(
        np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(seg_a, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(seg_b, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(radii, dtype=np.float64).reshape(-1),
        float(t_far), float(eps), int(max_steps),
    )


capsule_sdf = _kernels_py.capsule_sdf
