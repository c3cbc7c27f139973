"""Dual-branch voxel/TPV features, focal anchor selection and Gaussian initialisation.

Feature volumes are channels-last arrays of shape ``(X, Y, Z, C)``. TPV planes
are stored as ``xy: (X, Y, C)``, ``yz: (Y, Z, C)`` and ``zx: (X, Z, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .gaussians import SemanticGaussian, VoxelGrid

HEAD_OUTPUTS = 11  # offset(3), scale(3), rotation(4), opacity(1)
SCALE_RANGE = (0.05, 2.0)
SIM_MODES = ("dot", "cosine")


def check_volume(volume) -> np.ndarray:
    v = np.asarray(volume, dtype=float)
    if v.ndim != 4:
        raise InvalidInputError(f"feature volume must have shape (X, Y, Z, C), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("feature volume contains non-finite values")
    return v


@dataclass
class TpvPlanes:
    xy: np.ndarray
    yz: np.ndarray
    zx: np.ndarray
    weights: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(3)
        X, Y, C = self.xy.shape
        if self.yz.shape[0] != Y or self.zx.shape[0] != X or self.yz.shape[1] != self.zx.shape[1]:
            raise InvalidInputError("TPV plane shapes are inconsistent")
        if self.yz.shape[2] != C or self.zx.shape[2] != C:
            raise InvalidInputError("TPV planes disagree on channel count")
        if not np.all(np.isfinite(self.weights)):
            raise InvalidInputError("TPV weights must be finite")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.xy.shape[0], self.xy.shape[1], self.yz.shape[1]

    def with_weights(self, weights) -> "TpvPlanes":
        return TpvPlanes(self.xy, self.yz, self.zx, weights)


def _mixing(C, rng):
    return np.eye(C) + 0.1 * rng.standard_normal((C, C)) / np.sqrt(C)


def tpv_pool(volume, weights=(1.0, 1.0, 1.0), mix_seed: int | None = None) -> TpvPlanes:
    """Mean-pool a feature volume along each axis into three planes.

    When ``mix_seed`` is given each plane is additionally multiplied by a
    seeded near-identity ``C x C`` channel-mixing matrix.
    """
    v = check_volume(volume)
    xy, yz, zx = v.mean(axis=2), v.mean(axis=0), v.mean(axis=1)
    if mix_seed is not None:
        rng = np.random.default_rng(mix_seed)
        C = v.shape[3]
        xy, yz, zx = (p @ _mixing(C, rng).T for p in (xy, yz, zx))
    return TpvPlanes(xy, yz, zx, weights)


def broadcast_tpv(planes: TpvPlanes) -> np.ndarray:
    """Voxel (i, j, k) <- w0 * xy[i, j] + w1 * yz[j, k] + w2 * zx[i, k]."""
    w = planes.weights
    return (
        w[0] * planes.xy[:, :, None, :]
        + w[1] * planes.yz[None, :, :, :]
        + w[2] * planes.zx[:, None, :, :]
    )


def fused_features(volume, planes: TpvPlanes) -> np.ndarray:
    """Voxel features plus the weighted TPV field."""
    v = check_volume(volume)
    if v.shape[:3] != planes.dims or v.shape[3] != planes.xy.shape[2]:
        raise InvalidInputError("volume and TPV planes have different shapes")
    return v + broadcast_tpv(planes)


def similarity_map(voxel_feats, tpv_field, mode: str = "dot") -> np.ndarray:
    """Per-voxel dot product (default) or cosine similarity of two feature volumes."""
    a, b = check_volume(voxel_feats), check_volume(tpv_field)
    if a.shape != b.shape:
        raise InvalidInputError(f"feature shapes differ: {a.shape} vs {b.shape}")
    dot = np.einsum("xyzc,xyzc->xyz", a, b)
    if mode == "dot":
        return dot
    if mode != "cosine":
        raise InvalidInputError(f"unknown similarity mode {mode!r}; expected one of {SIM_MODES}")
    na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
    ok = (na >= 1e-12) & (nb >= 1e-12)
    out = np.zeros_like(dot)
    out[ok] = dot[ok] / (na[ok] * nb[ok])
    return out


@dataclass
class AnchorSet:
    positions: np.ndarray  # (K, 3) voxel indices
    features: np.ndarray  # (K, C)
    scores: np.ndarray  # (K,) non-increasing

    @property
    def k(self) -> int:
        return len(self.positions)

    def linear_indices(self, dims) -> np.ndarray:
        return np.ravel_multi_index(tuple(self.positions.T), dims)


def select_anchors(sim, fused_feats, k: int) -> AnchorSet:
    """Top-``k`` voxels by similarity, ties broken by ascending flat index."""
    sim = np.asarray(sim, dtype=float)
    feats = check_volume(fused_feats)
    if sim.shape != feats.shape[:3]:
        raise InvalidInputError(f"similarity map {sim.shape} does not match features {feats.shape[:3]}")
    n = sim.size
    if int(k) != k or not 1 <= k <= n:
        raise InvalidInputError(f"K must be in [1, {n}], got {k}")
    flat = sim.ravel()
    order = np.argsort(-flat, kind="stable")[: int(k)]
    positions = np.stack(np.unravel_index(order, sim.shape), axis=1)
    return AnchorSet(positions, feats.reshape(n, -1)[order].copy(), flat[order].copy())


@dataclass
class GaussianHead:
    """Single affine layer mapping an anchor feature to raw Gaussian properties."""

    weight: np.ndarray  # (11, C)
    bias: np.ndarray  # (11,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float).reshape(HEAD_OUTPUTS)
        if self.weight.ndim != 2 or self.weight.shape[0] != HEAD_OUTPUTS:
            raise InvalidInputError(f"head weight must be ({HEAD_OUTPUTS}, C), got {self.weight.shape}")

    @classmethod
    def zeros(cls, C):
        return cls(np.zeros((HEAD_OUTPUTS, C)), np.zeros(HEAD_OUTPUTS))

    @classmethod
    def init(cls, C, rng, std=0.1, scale_bias=0.0):
        """Small random weights; bias points the rotation at identity."""
        bias = np.zeros(HEAD_OUTPUTS)
        bias[3:6] = scale_bias
        bias[6] = 1.0
        return cls(std * rng.standard_normal((HEAD_OUTPUTS, C)) / np.sqrt(C), bias)

    def __call__(self, features) -> np.ndarray:
        F = np.atleast_2d(np.asarray(features, dtype=float))
        if F.shape[1] != self.weight.shape[1]:
            raise InvalidInputError(f"head expects {self.weight.shape[1]} channels, got {F.shape[1]}")
        return F @ self.weight.T + self.bias


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def decode_raw(raw, anchor_centers, resolution, scale_range=SCALE_RANGE):
    """Activate raw head outputs ``(K, 11)`` into Gaussian geometry.

    Returns ``(means, scales, quats, opacities)``; quaternions with norm below
    1e-8 fall back to the identity.
    """
    raw = np.atleast_2d(raw)
    smin, smax = scale_range
    means = anchor_centers + np.tanh(raw[:, 0:3]) * resolution
    scales = smin + (smax - smin) * sigmoid(raw[:, 3:6])
    r = raw[:, 6:10]
    norm = np.linalg.norm(r, axis=1, keepdims=True)
    small = norm[:, 0] < 1e-8
    quats = np.where(small[:, None], np.array([1.0, 0.0, 0.0, 0.0]), r / np.where(small[:, None], 1.0, norm))
    opacities = sigmoid(raw[:, 10])
    return means, scales, quats, opacities


def init_gaussians(
    anchors: AnchorSet,
    head: GaussianHead,
    grid: VoxelGrid,
    scale_range=SCALE_RANGE,
) -> list[SemanticGaussian]:
    """One Gaussian per anchor; semantics are the anchor's fused feature."""
    raw = head(anchors.features)
    centers = grid.index_centers(anchors.positions)
    means, scales, quats, opac = decode_raw(raw, centers, grid.resolution, scale_range)
    return [
        SemanticGaussian(means[i], scales[i], quats[i], float(opac[i]), anchors.features[i])
        for i in range(anchors.k)
    ]
