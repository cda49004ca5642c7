"""File persistence: PNG images, OBJ meshes, camera rigs, vertex sets, checkpoints."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .cameras import Camera
from .errors import FormatError, VersionMismatchError
from .mesh import Mesh

RIG_FORMAT = "humanfield-rig"
CHECKPOINT_FORMAT = "humanfield-checkpoint"
CHECKPOINT_VERSION = 1


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(2, "no such file", str(path))
    return path


def save_image(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit RGB PNG."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(img * 255.0).astype(np.uint8), mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    path = _require(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise FormatError(f"{path}: unreadable image ({exc})") from exc


def save_depth(path, depth: np.ndarray, mask: np.ndarray | None = None) -> None:
    """16-bit PNG of depth normalised to its [min, max] over ``mask``; range goes to a JSON sidecar."""
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.ones(depth.shape, bool) if mask is None else np.asarray(mask, bool)
    lo = float(depth[mask].min()) if mask.any() else 0.0
    hi = float(depth[mask].max()) if mask.any() else 1.0
    scale = hi - lo if hi > lo else 1.0
    q = np.where(mask, np.round((depth - lo) / scale * 65534.0) + 1, 0).astype(np.uint16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q).save(path)
    Path(path).with_suffix(".json").write_text(json.dumps({"min": lo, "max": hi, "background": 0}))


def load_depth(path) -> tuple[np.ndarray, np.ndarray]:
    path = _require(path)
    meta = json.loads(_require(Path(path).with_suffix(".json")).read_text())
    q = np.asarray(Image.open(path), dtype=np.float64)
    mask = q > 0
    scale = meta["max"] - meta["min"] if meta["max"] > meta["min"] else 1.0
    return np.where(mask, (q - 1) / 65534.0 * scale + meta["min"], 0.0), mask


def save_mesh(path, mesh: Mesh) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    has_n = mesh.normals is not None and len(mesh.normals) == len(mesh.vertices)
    if has_n:
        lines += [f"vn {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.normals]
        lines += [f"f {a}//{a} {b}//{b} {c}//{c}" for a, b, c in mesh.faces + 1]
    else:
        lines += [f"f {a} {b} {c}" for a, b, c in mesh.faces + 1]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    path = _require(path)
    verts, normals, faces = [], [], []
    try:
        for line in path.read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed OBJ ({exc})") from exc
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3) if len(normals) == len(verts) and normals else None
    return Mesh(v, f, n)


def save_vertex_set(path, vertices: np.ndarray, labels: np.ndarray) -> Path:
    """Vertices as OBJ ``v`` records plus a ``<stem>_parts.txt`` sidecar; returns the sidecar path."""
    save_mesh(path, Mesh(np.asarray(vertices), np.zeros((0, 3), dtype=np.int64)))
    sidecar = Path(path).with_name(Path(path).stem + "_parts.txt")
    sidecar.write_text("\n".join(str(int(x)) for x in labels) + "\n")
    return sidecar


def load_vertex_set(path, labels_path=None) -> tuple[np.ndarray, np.ndarray]:
    verts = load_mesh(path).vertices
    labels_path = _require(labels_path or Path(path).with_name(Path(path).stem + "_parts.txt"))
    try:
        labels = np.array([int(x) for x in labels_path.read_text().split()], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{labels_path}: part labels must be integers ({exc})") from exc
    if len(labels) != len(verts):
        raise FormatError(f"{labels_path}: {len(labels)} labels for {len(verts)} vertices")
    return verts, labels


def save_rig(path, cameras: list[Camera]) -> None:
    doc = {"format": RIG_FORMAT, "version": 1, "cameras": [c.to_dict() for c in cameras]}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1))


def load_rig(path) -> list[Camera]:
    path = _require(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a JSON camera rig ({exc})") from exc
    if doc.get("format") != RIG_FORMAT or doc.get("version") != 1:
        raise VersionMismatchError(f"{path}: expected {RIG_FORMAT} v1, found {doc.get('format')} v{doc.get('version')}")
    try:
        return [Camera.from_dict(c) for c in doc["cameras"]]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: invalid camera entry ({exc})") from exc


def save_checkpoint(path, payload: dict) -> None:
    data = dict(payload, format=CHECKPOINT_FORMAT, version=CHECKPOINT_VERSION)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    torch.save(data, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> dict:
    path = _require(path)
    try:
        data = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # noqa: BLE001 - torch raises a variety of types on corrupt files
        raise FormatError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
        raise VersionMismatchError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if data.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"{path}: checkpoint version {data.get('version')} != supported {CHECKPOINT_VERSION}")
    return data
