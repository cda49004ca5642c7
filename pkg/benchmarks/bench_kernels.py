"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--points N] [--vertices Q] [--repeat R]
"""

import argparse
import json
import timeit

import numpy as np

from humanfield import _kernels_py
from humanfield.scenes import make_synthetic_scene

try:
    from humanfield import _kernels_cy
except ImportError:  # extension not built
    _kernels_cy = None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--vertices", type=int, default=1024)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--rays", type=int, default=16384)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    scene = make_synthetic_scene("capsule_person", 0, n_vertices=args.vertices)
    verts = np.ascontiguousarray(scene.vertices, dtype=np.float64)
    lo, hi = scene.bbox
    pts = lo + (hi - lo) * rng.random((args.points, 3))
    o = rng.normal(size=(args.rays, 3))
    o = 3.0 * o / np.linalg.norm(o, axis=1, keepdims=True)
    d = (lo + hi) / 2 + 0.3 * rng.normal(size=o.shape) - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    seg = tuple(np.ascontiguousarray(x, dtype=np.float64) for x in (scene.seg_a, scene.seg_b, scene.radii))

    cases = {
        "knn": lambda m: m.knn_indices(pts, verts, args.k),
        "sphere_trace": lambda m: m.sphere_trace_capsules(o, d, *seg, 8.0, 1e-7, 512),
    }
    results = {}
    for name, fn in cases.items():
        row = {"python_s": min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))}
        if _kernels_cy is not None:
            row["cython_s"] = min(timeit.repeat(lambda: fn(_kernels_cy), number=1, repeat=args.repeat))
            row["speedup"] = row["python_s"] / row["cython_s"]
            a, b = fn(_kernels_py), fn(_kernels_cy)
            row["agree"] = bool(np.array_equal(a, b) if name == "knn" else np.allclose(a, b, atol=1e-6, equal_nan=True))
        results[name] = row
        print(json.dumps({name: row}))
    return results


if __name__ == "__main__":
    main()
