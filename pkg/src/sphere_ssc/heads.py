"""Voxel-branch and Gaussian-branch class-logit predictions and their fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .gaussians import DEFAULT_CUTOFF, SemanticGaussian, VoxelGrid, quat_to_rotation_batch, support_slices
from .harmonics import Y00, n_basis, sh_basis_batch

DEFAULT_EMPTY_BIAS = 2.0
_NEAR = 1e-9


def voxel_head(fused_feats, weight, bias) -> np.ndarray:
    """Per-voxel affine map ``(X, Y, Z, C) -> (X, Y, Z, N+1)``."""
    F = np.asarray(fused_feats, dtype=float)
    weight = np.asarray(weight, dtype=float)
    bias = np.asarray(bias, dtype=float)
    if weight.ndim != 2 or F.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise InvalidInputError(
            f"head of shape {weight.shape} / bias {bias.shape} cannot map {F.shape[-1]} channels"
        )
    return F @ weight.T + bias


def fuse(v_voxel, v_gauss) -> np.ndarray:
    """Elementwise logit sum of the two branches."""
    a, b = np.asarray(v_voxel, dtype=float), np.asarray(v_gauss, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"cannot fuse volumes of shapes {a.shape} and {b.shape}")
    return a + b


@dataclass
class _SplatRecord:
    index: int
    lin: np.ndarray  # flat voxel indices inside the cutoff
    d: np.ndarray  # (n, 3) voxel centre minus mean
    u: np.ndarray  # (n, 3) whitened offsets
    e: np.ndarray  # (n,) exp(-q/2)
    dirs: np.ndarray  # (n, 3) unit directions
    r: np.ndarray  # (n,) distances
    near: np.ndarray  # (n,) bool, degree-0 only
    Y: np.ndarray  # (n, B)


class SplatCache:
    """Per-Gaussian intermediates of :func:`splat_ssh` needed for the backward pass."""

    def __init__(self, grid, degree, scales, R, opacities, coeffs):
        self.grid = grid
        self.degree = degree
        self.scales = scales
        self.R = R
        self.opacities = opacities
        self.coeffs = coeffs
        self.records: list[_SplatRecord] = []


def splat_ssh(
    means,
    scales,
    quats,
    opacities,
    coeffs,
    grid: VoxelGrid,
    cutoff: float = DEFAULT_CUTOFF,
    keep_cache: bool = False,
):
    """Splat Gaussians whose semantics are direction-dependent SH fields.

    ``coeffs`` has shape ``(K, (L+1)^2, N)``. The query direction for voxel x
    is the unit vector from the Gaussian mean to x; within 1e-9 m of the mean
    only the degree-0 term is used. Returns the ``(X, Y, Z, N)`` volume, and
    the cache for :func:`splat_ssh_backward` when ``keep_cache`` is set.
    """
    means = np.asarray(means, dtype=float)
    scales = np.asarray(scales, dtype=float)
    opacities = np.asarray(opacities, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    K, nb, nc = coeffs.shape
    degree = int(round(np.sqrt(nb))) - 1
    if n_basis(degree) != nb:
        raise InvalidInputError(f"coefficient blocks need a square row count, got {nb}")
    if not cutoff > 0:
        raise InvalidInputError(f"cutoff must be positive, got {cutoff}")
    R = quat_to_rotation_batch(np.asarray(quats, dtype=float))
    centers = grid.centers()
    flat_shape = centers.shape[:3]
    out = np.zeros((grid.n_voxels, nc))
    cache = SplatCache(grid, degree, scales, R, opacities, coeffs) if keep_cache else None
    cut2 = cutoff * cutoff
    for i in range(K):
        sl = support_slices(means[i], scales[i], R[i], grid, cutoff)
        if sl is None:
            continue
        d = centers[sl].reshape(-1, 3) - means[i]
        u = (d @ R[i]) / scales[i]
        q = np.einsum("na,na->n", u, u)
        keep = q <= cut2
        if not keep.all():
            d, u, q = d[keep], u[keep], q[keep]
        if len(q) == 0:
            continue
        ii, jj, kk = np.meshgrid(*(np.arange(s.start, s.stop) for s in sl), indexing="ij")
        lin = np.ravel_multi_index((ii.ravel(), jj.ravel(), kk.ravel()), flat_shape)[keep]
        e = np.exp(-0.5 * q)
        r = np.sqrt(np.einsum("na,na->n", d, d))
        near = r < _NEAR
        dirs = d / np.where(near, 1.0, r)[:, None]
        if near.any():
            dirs[near] = (0.0, 0.0, 1.0)
        Y = sh_basis_batch(degree, dirs)
        if near.any():
            Y[near] = 0.0
            Y[near, 0] = Y00
        out[lin] += (opacities[i] * e)[:, None] * (Y @ coeffs[i])
        if keep_cache:
            cache.records.append(_SplatRecord(i, lin, d, u, e, dirs, r, near, Y))
    out = out.reshape(flat_shape + (nc,))
    return (out, cache) if keep_cache else out


def splat_ssh_backward(cache: SplatCache, grad_out):
    """Gradients of a scalar loss w.r.t. the inputs of :func:`splat_ssh`.

    Returns ``(d_means, d_scales, d_R, d_opacities, d_coeffs)``. The direction
    dependence of the SH field on the mean is differentiated exactly.
    """
    coeffs = cache.coeffs
    K, nb, nc = coeffs.shape
    G = np.asarray(grad_out, dtype=float).reshape(-1, nc)
    d_means = np.zeros((K, 3))
    d_scales = np.zeros((K, 3))
    d_R = np.zeros((K, 3, 3))
    d_opac = np.zeros(K)
    d_coeffs = np.zeros_like(coeffs)
    for rec in cache.records:
        i = rec.index
        alpha, s, R, c = cache.opacities[i], cache.scales[i], cache.R[i], coeffs[i]
        g = G[rec.lin]
        S = rec.Y @ c
        gS = np.einsum("nc,nc->n", g, S)
        w = alpha * rec.e
        d_opac[i] = np.dot(rec.e, gS)
        d_coeffs[i] = (rec.Y * w[:, None]).T @ g
        # exponent path: value = w * S, dvalue/dq = -0.5 * value
        du = (-w * gS)[:, None] * rec.u
        dd = (du / s) @ R.T
        d_scales[i] = -np.einsum("na,na->a", du, rec.u) / s
        d_R[i] = rec.d.T @ (du / s)
        # direction path
        if cache.degree > 0:
            far = ~rec.near
            _, Yg = sh_basis_batch(cache.degree, rec.dirs[far], grad=True)
            dY = w[far, None] * (g[far] @ c.T)
            gdir = np.einsum("nb,nba->na", dY, Yg)
            n = rec.dirs[far]
            radial = np.einsum("na,na->n", gdir, n)
            dd[far] += (gdir - radial[:, None] * n) / rec.r[far, None]
        d_means[i] = -dd.sum(axis=0)
    return d_means, d_scales, d_R, d_opac, d_coeffs


def gauss_predict(
    gaussians: Sequence[SemanticGaussian],
    coeffs,
    grid: VoxelGrid,
    cutoff: float = DEFAULT_CUTOFF,
    empty_bias: float = DEFAULT_EMPTY_BIAS,
) -> np.ndarray:
    """Gaussian-branch logits: SSH splat plus a constant bias on the empty channel.

    The geometry comes from ``gaussians``; their ``semantics`` field is not
    used, the per-Gaussian SH ``coeffs`` ``(K, (L+1)^2, N+1)`` are.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if len(gaussians) != len(coeffs):
        raise InvalidInputError(f"{len(gaussians)} Gaussians but {len(coeffs)} coefficient blocks")
    if not gaussians:
        out = np.zeros(grid.dims + (coeffs.shape[-1],))
        out[..., 0] += empty_bias
        return out
    means = np.array([g.mean for g in gaussians])
    scales = np.array([g.scale for g in gaussians])
    quats = np.array([g.rotation for g in gaussians])
    opac = np.array([g.opacity for g in gaussians])
    out = splat_ssh(means, scales, quats, opac, coeffs, grid, cutoff)
    out[..., 0] += empty_bias
    return out
