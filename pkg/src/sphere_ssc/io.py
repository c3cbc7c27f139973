"""Binary voxel-scene and Gaussian-set files, PLY export, report writers.

Scene file (little-endian)::

    magic "SPHV" | version u16 | X, Y, Z u32 | resolution f32 | origin 3 x f32
    | payload kind u8 (0 labels-u8, 1 logits-f32 x (N+1), 2 scalar-f32) | N u16
    | payload, x-major with z fastest (channels innermost for logits)

Gaussian-set file::

    magic "SPHG" | version u16 | K u32 | channels u16 | SH degree u16
    | K records of f32: mean 3, scale 3, quaternion (w,x,y,z) 4, opacity 1,
      (L+1)^2 * channels SH coefficients (basis-major, channel fastest)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, SphereIOError
from .gaussians import SemanticGaussian, VoxelGrid
from .harmonics import n_basis
from .losses import IGNORE_LABEL

SCENE_MAGIC = b"SPHV"
GAUSS_MAGIC = b"SPHG"
VERSION = 1
_SCENE_HEADER = struct.Struct("<4sH3If3fBH")
_GAUSS_HEADER = struct.Struct("<4sHIHH")
KINDS = ("labels", "logits", "scalar")


@dataclass
class SceneFile:
    grid: VoxelGrid
    kind: str
    n_semantic: int  # N, the number of non-empty classes
    payload: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"payload kind must be one of {KINDS}, got {self.kind!r}")
        expected = self.grid.dims + ((self.n_semantic + 1,) if self.kind == "logits" else ())
        if self.payload.shape != expected:
            raise InvalidInputError(f"{self.kind} payload must have shape {expected}, got {self.payload.shape}")
        if self.kind == "labels":
            self.payload = np.asarray(self.payload).astype(np.uint8)
        else:
            self.payload = np.asarray(self.payload).astype("<f4")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise SphereIOError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, data: bytes):
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise SphereIOError(f"cannot write {path}: {exc}") from exc


def scene_to_bytes(scene: SceneFile) -> bytes:
    g = scene.grid
    header = _SCENE_HEADER.pack(
        SCENE_MAGIC, VERSION, *g.dims, g.resolution, *g.origin, KINDS.index(scene.kind), scene.n_semantic
    )
    dtype = np.uint8 if scene.kind == "labels" else "<f4"
    return header + np.ascontiguousarray(scene.payload, dtype=dtype).tobytes()


def scene_from_bytes(data: bytes) -> SceneFile:
    if len(data) < _SCENE_HEADER.size:
        raise InvalidInputError("scene file is shorter than its header")
    magic, version, X, Y, Z, res, ox, oy, oz, kind, n = _SCENE_HEADER.unpack_from(data)
    if magic != SCENE_MAGIC:
        raise InvalidInputError(f"bad scene magic {magic!r}")
    if version != VERSION:
        raise InvalidInputError(f"unsupported scene file version {version}")
    if kind >= len(KINDS):
        raise InvalidInputError(f"unknown payload kind {kind}")
    kind = KINDS[kind]
    shape = (X, Y, Z) + ((n + 1,) if kind == "logits" else ())
    dtype = np.dtype(np.uint8) if kind == "labels" else np.dtype("<f4")
    body = data[_SCENE_HEADER.size :]
    if len(body) != int(np.prod(shape)) * dtype.itemsize:
        raise InvalidInputError(
            f"payload has {len(body)} bytes, header implies {int(np.prod(shape)) * dtype.itemsize}"
        )
    payload = np.frombuffer(body, dtype=dtype).reshape(shape).copy()
    return SceneFile(VoxelGrid((X, Y, Z), res, (ox, oy, oz)), kind, n, payload)


def write_scene(path, scene: SceneFile):
    _write_bytes(path, scene_to_bytes(scene))


def read_scene(path) -> SceneFile:
    return scene_from_bytes(_read_bytes(path))


def gaussians_to_bytes(gaussians, coeffs) -> bytes:
    coeffs = np.asarray(coeffs, dtype=float)
    K, nb, nc = coeffs.shape if coeffs.ndim == 3 else (0, 1, 0)
    if len(gaussians) != K:
        raise InvalidInputError(f"{len(gaussians)} Gaussians but {K} coefficient blocks")
    degree = int(round(np.sqrt(nb))) - 1
    if n_basis(degree) != nb:
        raise InvalidInputError("coefficient blocks need a square basis count")
    rows = [
        np.concatenate([g.mean, g.scale, g.rotation, [g.opacity], coeffs[i].ravel()]) for i, g in enumerate(gaussians)
    ]
    body = np.asarray(rows, dtype="<f4").tobytes() if rows else b""
    return _GAUSS_HEADER.pack(GAUSS_MAGIC, VERSION, K, nc, degree) + body


def gaussians_from_bytes(data: bytes):
    """Returns ``(gaussians, coeffs)``; each Gaussian's ``semantics`` is its degree-0 block."""
    if len(data) < _GAUSS_HEADER.size:
        raise InvalidInputError("Gaussian file is shorter than its header")
    magic, version, K, nc, degree = _GAUSS_HEADER.unpack_from(data)
    if magic != GAUSS_MAGIC:
        raise InvalidInputError(f"bad Gaussian file magic {magic!r}")
    if version != VERSION:
        raise InvalidInputError(f"unsupported Gaussian file version {version}")
    width = 11 + n_basis(degree) * nc
    body = data[_GAUSS_HEADER.size :]
    if len(body) != K * width * 4:
        raise InvalidInputError(f"Gaussian records have {len(body)} bytes, header implies {K * width * 4}")
    rec = np.frombuffer(body, dtype="<f4").reshape(K, width).astype(float)
    coeffs = rec[:, 11:].reshape(K, n_basis(degree), nc)
    gaussians = [SemanticGaussian(r[0:3], r[3:6], r[6:10], min(max(r[10], 0.0), 1.0), coeffs[i, 0]) for i, r in enumerate(rec)]
    return gaussians, coeffs


def write_gaussians(path, gaussians, coeffs):
    _write_bytes(path, gaussians_to_bytes(gaussians, coeffs))


def read_gaussians(path):
    return gaussians_from_bytes(_read_bytes(path))


# class colours from the SemanticKITTI legend
PALETTE = {
    "empty": (0, 0, 0),
    "car": (91, 155, 213),
    "bicycle": (100, 230, 245),
    "motorcycle": (30, 60, 150),
    "truck": (80, 30, 180),
    "other-vehicle": (0, 0, 255),
    "person": (255, 30, 30),
    "bicyclist": (255, 37, 199),
    "motorcyclist": (150, 30, 90),
    "road": (255, 0, 255),
    "parking": (255, 150, 255),
    "sidewalk": (75, 0, 75),
    "other-ground": (175, 0, 75),
    "building": (255, 200, 0),
    "fence": (255, 120, 50),
    "vegetation": (0, 175, 0),
    "trunk": (135, 60, 0),
    "terrain": (150, 240, 80),
    "pole": (255, 240, 150),
    "traffic-sign": (255, 0, 0),
}
KITTI_CLASSES = ("empty",) + tuple(name for name in PALETTE if name != "empty")


def class_colors(class_names) -> np.ndarray:
    colors = np.array([PALETTE.get(name, (128, 128, 128)) for name in class_names], dtype=np.uint8)
    return np.vstack([colors, np.full((256 - len(colors), 3), 128, dtype=np.uint8)])


def _ply(points, colors, alpha) -> str:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "property uchar alpha",
        "end_header",
    ]
    for p, c, a in zip(points, colors, alpha):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]} {a}")
    return "\n".join(lines) + "\n"


def scene_to_ply(labels, grid: VoxelGrid, class_names=KITTI_CLASSES) -> str:
    """One vertex per occupied voxel centre, coloured by class."""
    labels = np.asarray(labels)
    occ = (labels != 0) & (labels != IGNORE_LABEL)
    idx = np.argwhere(occ)
    colors = class_colors(class_names)[labels[occ]]
    return _ply(grid.index_centers(idx), colors, np.full(len(idx), 255))


def gaussians_to_ply(gaussians, coeffs=None, class_names=KITTI_CLASSES) -> str:
    """Gaussian means as points; colour from the strongest non-empty degree-0 channel."""
    if not gaussians:
        return _ply([], [], [])
    sem = np.array([g.semantics for g in gaussians]) if coeffs is None else np.asarray(coeffs)[:, 0, :]
    cls = 1 + np.argmax(sem[:, 1:], axis=1) if sem.shape[1] > 1 else np.zeros(len(sem), dtype=int)
    colors = class_colors(class_names)[cls]
    alpha = np.round(255 * np.array([g.opacity for g in gaussians])).astype(int)
    return _ply(np.array([g.mean for g in gaussians]), colors, alpha)


def export_ply(path, text: str):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise SphereIOError(f"cannot write {path}: {exc}") from exc


def write_metrics(report, text_path, json_path=None):
    try:
        Path(text_path).write_text(report.to_text())
        if json_path is not None:
            Path(json_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise SphereIOError(f"cannot write metrics: {exc}") from exc


TRAJECTORY_COLUMNS = ("iteration", "total", "ce", "lovasz", "scal", "orth", "align", "miou", "occ_iou", "gauss_occ_iou")


def trajectory_lines(records):
    yield "\t".join(TRAJECTORY_COLUMNS)
    for r in records:
        vals = [r.iteration, r.total, *(r.terms[k] for k in ("ce", "lovasz", "scal", "orth", "align"))]
        vals += [r.miou, r.occ_iou, r.gauss_occ_iou]
        yield "\t".join(str(v) if isinstance(v, int) else repr(float(v)) for v in vals)


def write_trajectory(path, records):
    try:
        Path(path).write_text("\n".join(trajectory_lines(records)) + "\n")
    except OSError as exc:
        raise SphereIOError(f"cannot write trajectory {path}: {exc}") from exc


def read_trajectory(path) -> list[dict]:
    lines = _read_bytes(path).decode().splitlines()
    cols = lines[0].split("\t")
    return [
        {c: (int(v) if c == "iteration" else float(v)) for c, v in zip(cols, line.split("\t"))} for line in lines[1:]
    ]
