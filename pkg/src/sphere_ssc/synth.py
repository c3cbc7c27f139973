"""Synthetic labelled voxel scenes and class-prototype feature volumes.

Primitives are specified in voxel-index space. A voxel belongs to a
primitive when its centre ``index + 0.5`` lies inside it (boundaries
inclusive); boxes and slabs take inclusive integer index ranges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .gaussians import VoxelGrid

EMPTY = 0
MINI_STREET_CLASSES = ("empty", "road", "sidewalk", "building", "car", "vegetation", "pole")
MINI_STREET_DIMS = (64, 64, 8)
MINI_STREET_RESOLUTION = 0.2


def _check_label(label):
    if int(label) != label or not 0 <= label < 255:
        raise InvalidInputError(f"label must be an integer in [0, 255), got {label}")
    return int(label)


def _check_range(lo, hi, dim, what):
    if not (0 <= lo <= hi < dim):
        raise InvalidInputError(f"{what} range [{lo}, {hi}] is outside [0, {dim - 1}]")


@dataclass
class Box:
    lo: tuple
    hi: tuple
    label: int

    def rasterize(self, labels):
        for a in range(3):
            _check_range(self.lo[a], self.hi[a], labels.shape[a], f"box axis {a}")
        labels[self.lo[0] : self.hi[0] + 1, self.lo[1] : self.hi[1] + 1, self.lo[2] : self.hi[2] + 1] = _check_label(
            self.label
        )


@dataclass
class Slab:
    """Full-extent layer covering z indices ``z0..z1``."""

    z0: int
    z1: int
    label: int

    def rasterize(self, labels):
        _check_range(self.z0, self.z1, labels.shape[2], "slab z")
        labels[:, :, self.z0 : self.z1 + 1] = _check_label(self.label)


def _centers(shape):
    return np.meshgrid(*(np.arange(n) + 0.5 for n in shape), indexing="ij")


def _check_point(p, shape, what):
    if any(not 0 <= p[a] <= shape[a] for a in range(len(p))):
        raise InvalidInputError(f"{what} {tuple(p)} lies outside the grid")


@dataclass
class Sphere:
    center: tuple  # voxel units
    radius: float
    label: int

    def rasterize(self, labels):
        _check_point(self.center, labels.shape, "sphere centre")
        if not self.radius > 0:
            raise InvalidInputError("sphere radius must be positive")
        x, y, z = _centers(labels.shape)
        cx, cy, cz = self.center
        inside = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= self.radius**2
        labels[inside] = _check_label(self.label)


@dataclass
class Cylinder:
    """Vertical cylinder over z indices ``z0..z1``."""

    center: tuple  # (x, y) voxel units
    radius: float
    z0: int
    z1: int
    label: int

    def rasterize(self, labels):
        _check_point(self.center, labels.shape[:2], "cylinder axis")
        _check_range(self.z0, self.z1, labels.shape[2], "cylinder z")
        if not self.radius > 0:
            raise InvalidInputError("cylinder radius must be positive")
        x, y, _ = _centers(labels.shape[:2] + (1,))
        disk = ((x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 <= self.radius**2)[:, :, 0]
        labels[:, :, self.z0 : self.z1 + 1][disk] = _check_label(self.label)


_KINDS = {"box": Box, "slab": Slab, "sphere": Sphere, "cylinder": Cylinder}


def primitive_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type", None)
    if kind not in _KINDS:
        raise InvalidInputError(f"unknown primitive type {kind!r}; expected one of {sorted(_KINDS)}")
    try:
        return _KINDS[kind](**d)
    except TypeError as exc:
        raise InvalidInputError(f"bad {kind} primitive: {exc}") from None


def rasterize(primitives, dims) -> np.ndarray:
    """Label grid with later primitives overwriting earlier ones."""
    labels = np.zeros(tuple(dims), dtype=np.uint8)
    for prim in primitives:
        if isinstance(prim, dict):
            prim = primitive_from_dict(prim)
        prim.rasterize(labels)
    return labels


def mini_street(seed: int = 0) -> list:
    """A street canyon: sidewalk ground, a road, buildings, cars, trees and poles."""
    rng = np.random.default_rng(seed)
    X, Y, Z = MINI_STREET_DIMS
    road, sidewalk, building, car, vegetation, pole = range(1, 7)
    prims = [Slab(0, 0, sidewalk), Box((0, 18, 0), (X - 1, 45, 0), road)]
    for y0, y1 in ((0, 9), (54, Y - 1)):
        x = int(rng.integers(0, 4))
        while x < X - 6:
            length = int(rng.integers(10, 22))
            height = int(rng.integers(4, Z))
            x1 = min(x + length - 1, X - 1)
            prims.append(Box((x, y0, 1), (x1, y1, height), building))
            x = x1 + int(rng.integers(2, 6))
    for lane in (22, 35):
        x0 = int(rng.integers(2, X - 26))
        prims.append(Box((x0, lane, 1), (x0 + 19, lane + 7, int(rng.integers(4, 7))), car))
    for y in (13.5, 50.5):
        for x in rng.choice(np.arange(6, X - 6, 12), size=3, replace=False):
            cx = float(x) + float(rng.uniform(-1.5, 1.5))
            prims.append(Cylinder((cx, y), 0.8, 1, 3, vegetation))
            prims.append(Sphere((cx, y, 5.5), 2.6, vegetation))
        for x in (3.5, X - 3.5):
            prims.append(Cylinder((x, y), 0.7, 1, Z - 1, pole))
    return prims


PRESETS = {"mini-street": (mini_street, MINI_STREET_DIMS, MINI_STREET_RESOLUTION, MINI_STREET_CLASSES)}


def gen_scene(source, seed: int = 0, dims=MINI_STREET_DIMS, resolution=MINI_STREET_RESOLUTION, origin=(0.0, 0.0, 0.0)):
    """Rasterise a preset name or a primitive list into ``(labels, grid, n_semantic)``.

    ``n_semantic`` is the number of non-empty classes the scene may contain.
    """
    if isinstance(source, str):
        if source not in PRESETS:
            raise InvalidInputError(f"unknown preset {source!r}; available: {sorted(PRESETS)}")
        build, dims, resolution, names = PRESETS[source]
        prims = build(seed)
        n_semantic = len(names) - 1
    else:
        prims = [primitive_from_dict(p) if isinstance(p, dict) else p for p in source]
        n_semantic = max([int(p.label) for p in prims], default=0)
    grid = VoxelGrid(dims, resolution, origin)
    return rasterize(prims, grid.dims), grid, n_semantic


def class_prototypes(n_classes, channels, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((n_classes, channels))
    return P / np.linalg.norm(P, axis=1, keepdims=True)


def gen_features(labels, n_classes, channels, sigma=0.0, seed=0) -> np.ndarray:
    """Class-prototype features plus Gaussian noise, shape ``(X, Y, Z, C)``.

    Every class gets a seeded unit-norm prototype; empty (and unlabelled)
    voxels carry 0.1 times the empty prototype.
    """
    labels = np.asarray(labels).astype(np.int64)
    if channels < n_classes:
        raise InvalidInputError(f"need at least {n_classes} feature channels, got {channels}")
    if sigma < 0:
        raise InvalidInputError("noise sigma must be non-negative")
    rng = np.random.default_rng(seed)
    protos = class_prototypes(n_classes, channels, rng.integers(2**63))
    lab = np.where((labels >= 0) & (labels < n_classes), labels, EMPTY)
    feats = protos[lab]
    feats[lab == EMPTY] *= 0.1
    if sigma > 0:
        feats = feats + sigma * rng.standard_normal(feats.shape)
    return feats
