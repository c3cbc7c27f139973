"""Semantic Gaussian primitives and additive splatting onto voxel grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

MIN_SCALE = 1e-4
DEFAULT_CUTOFF = 3.0


@dataclass(frozen=True)
class VoxelGrid:
    """Axis-aligned voxel lattice. Voxel (i, j, k) is centred at
    ``origin + resolution * (i + 0.5, j + 0.5, k + 0.5)``; flat order is
    x-major with z varying fastest (C order on an ``(X, Y, Z)`` array).
    """

    dims: tuple[int, int, int]
    resolution: float = 0.2
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise InvalidInputError(f"grid dims must be three positive integers, got {self.dims}")
        if not (np.isfinite(self.resolution) and self.resolution > 0):
            raise InvalidInputError(f"grid resolution must be positive, got {self.resolution}")
        origin = tuple(float(o) for o in self.origin)
        if len(origin) != 3:
            raise InvalidInputError("grid origin must be a 3-vector")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", origin)

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def center(self, i, j, k) -> np.ndarray:
        return np.asarray(self.origin) + self.resolution * (np.array([i, j, k], dtype=float) + 0.5)

    def centers(self) -> np.ndarray:
        """All voxel centres as an ``(X, Y, Z, 3)`` array."""
        axes = [self.origin[a] + self.resolution * (np.arange(self.dims[a]) + 0.5) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def index_centers(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=float)
        return np.asarray(self.origin) + self.resolution * (idx + 0.5)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.origin)
        return lo, lo + self.resolution * np.asarray(self.dims, dtype=float)

    def shifted(self, offset) -> "VoxelGrid":
        return VoxelGrid(self.dims, self.resolution, tuple(np.asarray(self.origin) + np.asarray(offset, dtype=float)))


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix of the (w, x, y, z) quaternion ``q`` after normalisation."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if q.shape != (4,) or not norm > 1e-12:
        raise InvalidInputError(f"quaternion must be a non-zero 4-vector, got {q}")
    w, x, y, z = q / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_to_rotation_batch(q: np.ndarray) -> np.ndarray:
    """Vectorised ``quat_to_rotation`` for already-normalised ``(K, 4)`` quaternions."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotation_grad_to_quat(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Pull ``dL/dR`` (K, 3, 3) back to ``dL/dq`` for unit quaternions ``q`` (K, 4)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = dR
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
        + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2]
    )
    dy = 2 * (
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
        - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2]
    )
    dz = 2 * (
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
        + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1]
    )
    return np.stack([dw, dx, dy, dz], axis=1)


def build_covariance(scale, rotation) -> np.ndarray:
    """Sigma = R S S^T R^T with S = diag(scale)."""
    s = np.asarray(scale, dtype=float)
    if s.shape != (3,) or not np.all(s > 0):
        raise InvalidInputError(f"scale must be a positive 3-vector, got {s}")
    R = quat_to_rotation(rotation)
    M = R * s
    cov = M @ M.T
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True, eq=False)
class SemanticGaussian:
    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    semantics: np.ndarray
    _R: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(3)
        scale = np.asarray(self.scale, dtype=float).reshape(3)
        if not np.all(scale > 0):
            raise InvalidInputError(f"scale components must be positive, got {scale}")
        scale = np.maximum(scale, MIN_SCALE)
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        norm = np.linalg.norm(q)
        if not norm > 1e-12:
            raise InvalidInputError("rotation quaternion has zero norm")
        q = q / norm
        opacity = float(self.opacity)
        if not 0.0 <= opacity <= 1.0:
            raise InvalidInputError(f"opacity must lie in [0, 1], got {opacity}")
        sem = np.atleast_1d(np.asarray(self.semantics, dtype=float))
        if sem.ndim != 1 or not np.all(np.isfinite(sem)):
            raise InvalidInputError("semantics must be a finite 1-D vector")
        for name, val in (("mean", mean), ("scale", scale), ("rotation", q), ("opacity", opacity), ("semantics", sem)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_R", quat_to_rotation(q))

    @property
    def n_channels(self) -> int:
        return self.semantics.shape[0]

    @property
    def rotation_matrix(self) -> np.ndarray:
        return self._R

    @property
    def covariance(self) -> np.ndarray:
        return build_covariance(self.scale, self.rotation)

    def mahalanobis_sq(self, x) -> np.ndarray:
        """Squared Mahalanobis distance of point(s) ``x`` (..., 3) from the mean."""
        u = ((np.asarray(x, dtype=float) - self.mean) @ self._R) / self.scale
        return np.sum(u * u, axis=-1)


def eval_gaussian(g: SemanticGaussian, x) -> np.ndarray:
    """alpha * exp(-0.5 * d^T Sigma^-1 d) * c for d = x - mean."""
    q = g.mahalanobis_sq(x)
    return g.opacity * np.exp(-0.5 * q)[..., None] * g.semantics


def support_slices(mean, scale, R, grid: VoxelGrid, cutoff: float):
    """Index box of voxel centres inside the axis-aligned hull of the cutoff ellipsoid.

    Returns a tuple of three slices, or ``None`` when the box misses the grid.
    """
    if not np.isfinite(cutoff):
        return tuple(slice(0, d) for d in grid.dims)
    half = cutoff * np.sqrt(np.sum((R * scale) ** 2, axis=1))
    rel_lo = (mean - half - np.asarray(grid.origin)) / grid.resolution - 0.5
    rel_hi = (mean + half - np.asarray(grid.origin)) / grid.resolution - 0.5
    out = []
    for a in range(3):
        lo = max(int(np.ceil(rel_lo[a])), 0)
        hi = min(int(np.floor(rel_hi[a])), grid.dims[a] - 1)
        if hi < lo:
            return None
        out.append(slice(lo, hi + 1))
    return tuple(out)


def canonical_order(gaussians: Sequence[SemanticGaussian]) -> np.ndarray:
    """Permutation sorting Gaussians lexicographically by their packed parameters."""
    if not gaussians:
        return np.zeros(0, dtype=int)
    packed = np.array(
        [np.concatenate([g.mean, g.scale, g.rotation, [g.opacity], g.semantics]) for g in gaussians]
    )
    return np.lexsort(packed.T[::-1])


def splat(
    gaussians: Sequence[SemanticGaussian],
    grid: VoxelGrid,
    cutoff: float = DEFAULT_CUTOFF,
    n_channels: int | None = None,
    canonical: bool = True,
) -> np.ndarray:
    """Sum Gaussian contributions at every voxel centre.

    Returns an ``(X, Y, Z, N)`` array. A Gaussian contributes exactly zero to
    voxels whose Mahalanobis distance exceeds ``cutoff``; ``cutoff=np.inf``
    gives the unculled sum. With ``canonical=True`` summation runs in a fixed
    parameter-sorted order, so the result is bitwise independent of the order
    of ``gaussians``.
    """
    if not cutoff > 0:
        raise InvalidInputError(f"cutoff must be positive, got {cutoff}")
    if n_channels is None:
        if not gaussians:
            raise InvalidInputError("n_channels is required to splat an empty Gaussian list")
        n_channels = gaussians[0].n_channels
    out = np.zeros(grid.dims + (n_channels,))
    if not gaussians:
        return out
    centers = grid.centers()
    order = canonical_order(gaussians) if canonical else range(len(gaussians))
    cut2 = cutoff * cutoff
    for idx in order:
        g = gaussians[idx]
        if g.n_channels != n_channels:
            raise InvalidInputError("all Gaussians must carry the same number of semantic channels")
        sl = support_slices(g.mean, g.scale, g._R, grid, cutoff)
        if sl is None:
            continue
        q = g.mahalanobis_sq(centers[sl])
        w = g.opacity * np.exp(-0.5 * q)
        w[q > cut2] = 0.0
        out[sl] += w[..., None] * g.semantics
    return out
