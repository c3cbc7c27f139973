"""Analytic-gradient fitting of the full two-branch model to a labelled voxel scene.

The forward chain is: TPV weights -> fused features -> voxel head logits and
anchor features -> Gaussian head (+ per-Gaussian residuals) -> activated
geometry, SH coefficients -> SSH splat -> losses. :meth:`Problem.evaluate`
runs it and, on request, the hand-written reverse pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import FitConfig
from .errors import DivergenceError, InvalidInputError
from .gaussians import SemanticGaussian, VoxelGrid, rotation_grad_to_quat
from .harmonics import ShProjection, n_basis, orth_loss_grad
from .heads import splat_ssh, splat_ssh_backward
from .losses import IGNORE_LABEL, LOSS_TERMS, align_loss, ce_loss, lovasz_loss, scal_loss
from .metrics import compute_metrics
from .scene import HEAD_OUTPUTS, AnchorSet, GaussianHead, TpvPlanes, sigmoid

log = logging.getLogger(__name__)

PARAM_GROUPS = (
    "tpv_weights",
    "head_weight",
    "head_bias",
    "gs_head_weight",
    "gs_head_bias",
    "sh_projection",
    "offsets",
    "scales",
    "rotations",
    "opacities",
    "sh_coeffs",
)


class ParamVector:
    """Flat float64 storage for named parameter arrays with a fixed layout."""

    def __init__(self, arrays: dict, lr_scale: dict | None = None):
        self.layout = {}
        offset = 0
        for name, arr in arrays.items():
            shape = np.shape(arr)
            size = int(np.prod(shape))
            self.layout[name] = (offset, shape)
            offset += size
        self.data = np.zeros(offset)
        for name, arr in arrays.items():
            self[name] = arr
        self.lr_scale = np.ones(offset)
        for name, s in (lr_scale or {}).items():
            self.lr_scale[self.slice(name)] = s

    def slice(self, name) -> slice:
        off, shape = self.layout[name]
        return slice(off, off + int(np.prod(shape)))

    def __getitem__(self, name) -> np.ndarray:
        return self.data[self.slice(name)].reshape(self.layout[name][1])

    def __setitem__(self, name, value):
        self.data[self.slice(name)] = np.asarray(value, dtype=float).ravel()

    def __len__(self):
        return len(self.data)

    @property
    def names(self):
        return list(self.layout)

    def to_dict(self) -> dict:
        return {name: self[name].copy() for name in self.layout}

    def flatten(self) -> np.ndarray:
        return self.data.copy()

    def unflatten(self, flat) -> "ParamVector":
        out = self.copy()
        flat = np.asarray(flat, dtype=float)
        if flat.shape != self.data.shape:
            raise InvalidInputError(f"expected {self.data.shape[0]} values, got {flat.shape}")
        out.data[:] = flat
        return out

    def zeros_like(self) -> "ParamVector":
        out = self.copy()
        out.data[:] = 0.0
        return out

    def copy(self) -> "ParamVector":
        out = ParamVector.__new__(ParamVector)
        out.layout = dict(self.layout)
        out.data = self.data.copy()
        out.lr_scale = self.lr_scale.copy()
        return out

    def group_of(self, index: int) -> str:
        for name, (off, shape) in self.layout.items():
            if off <= index < off + int(np.prod(shape)):
                return name
        raise IndexError(index)


@dataclass
class Problem:
    """Fixed data of a fitting problem; parameters live in a :class:`ParamVector`."""

    grid: VoxelGrid
    labels: np.ndarray  # (X, Y, Z) ground truth
    features: np.ndarray  # (X, Y, Z, C) voxel-branch features
    planes: TpvPlanes  # pooled planes; their weights are the initial TPV weights
    anchors: AnchorSet
    n_classes: int  # N + 1 including empty
    degree: int = 2
    lam: float = 1e-6
    cutoff: float = 3.0
    empty_bias: float = 2.0
    scale_range: tuple = (0.05, 2.0)
    ignore_label: int = IGNORE_LABEL
    terms: tuple = LOSS_TERMS

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.shape != self.grid.dims or self.features.shape[:3] != self.grid.dims:
            raise InvalidInputError("labels and features must match the grid dims")
        self._anchor_idx = tuple(np.asarray(self.anchors.positions).T)
        self._anchor_centers = self.grid.index_centers(self.anchors.positions)
        unknown = set(self.terms) - set(LOSS_TERMS)
        if unknown:
            raise InvalidInputError(f"unknown loss terms {sorted(unknown)}")

    @property
    def channels(self) -> int:
        return self.features.shape[3]

    @property
    def k(self) -> int:
        return self.anchors.k

    def init_params(self, rng, head_std=0.1) -> ParamVector:
        """Seeded initial parameters; per-Gaussian residuals start at zero.

        The Gaussian head bias starts at an identity rotation and a scale of
        about two voxels.
        """
        C, K, nc = self.channels, self.k, self.n_classes
        smin, smax = self.scale_range
        target = np.clip(2.0 * self.grid.resolution, smin + 1e-3, smax - 1e-3)
        frac = (target - smin) / (smax - smin)
        gs_head = GaussianHead.init(C, rng, std=head_std, scale_bias=np.log(frac / (1 - frac)))
        proj = ShProjection.init(self.degree, nc, C, rng, lam=self.lam)
        return ParamVector(
            {
                "tpv_weights": self.planes.weights,
                "head_weight": head_std * rng.standard_normal((nc, C)) / np.sqrt(C),
                "head_bias": np.zeros(nc),
                "gs_head_weight": gs_head.weight,
                "gs_head_bias": gs_head.bias,
                "sh_projection": proj.weights,
                "offsets": np.zeros((K, 3)),
                "scales": np.zeros((K, 3)),
                "rotations": np.zeros((K, 4)),
                "opacities": np.zeros(K),
                "sh_coeffs": np.zeros((K, n_basis(self.degree), nc)),
            }
        )

    # forward / backward -------------------------------------------------

    def _tpv_field(self, w):
        p = self.planes
        return w[0] * p.xy[:, :, None, :] + w[1] * p.yz[None, :, :, :] + w[2] * p.zx[:, None, :, :]

    def _geometry(self, params: ParamVector, F_anc):
        raw = F_anc @ params["gs_head_weight"].T + params["gs_head_bias"]
        raw = raw + np.concatenate(
            [params["offsets"], params["scales"], params["rotations"], params["opacities"][:, None]], axis=1
        )
        smin, smax = self.scale_range
        t = np.tanh(raw[:, 0:3])
        means = self._anchor_centers + t * self.grid.resolution
        sg = sigmoid(raw[:, 3:6])
        scales = smin + (smax - smin) * sg
        r = raw[:, 6:10]
        rn = np.linalg.norm(r, axis=1)
        small = rn < 1e-8
        quats = np.where(small[:, None], np.array([1.0, 0.0, 0.0, 0.0]), r / np.where(small, 1.0, rn)[:, None])
        so = sigmoid(raw[:, 10])
        return raw, means, scales, quats, so, (t, sg, rn, small)

    def gaussians(self, params: ParamVector) -> tuple[list[SemanticGaussian], np.ndarray]:
        """Current Gaussians and their SH coefficient blocks ``(K, B, N+1)``."""
        fused_anc = self.features[self._anchor_idx] + self._tpv_field(params["tpv_weights"])[self._anchor_idx]
        _, means, scales, quats, opac, _ = self._geometry(params, fused_anc)
        coeffs = self._coeffs(params, fused_anc)
        gs = [SemanticGaussian(means[i], scales[i], quats[i], float(opac[i]), coeffs[i, 0]) for i in range(self.k)]
        return gs, coeffs

    def _coeffs(self, params, F_anc):
        K, nb, nc = self.k, n_basis(self.degree), self.n_classes
        return (F_anc @ params["sh_projection"].T).reshape(K, nb, nc) + params["sh_coeffs"]

    def evaluate(self, params: ParamVector, grad: bool = False):
        """Loss breakdown, predictions and (optionally) the gradient.

        Returns ``(total, breakdown, preds, grad_or_None)`` where ``preds``
        holds ``v_voxel``, ``v_gauss`` and ``fused`` logit volumes.
        """
        w = params["tpv_weights"]
        fused_feats = self.features + self._tpv_field(w)
        Wh, bh = params["head_weight"], params["head_bias"]
        v_voxel = fused_feats @ Wh.T + bh
        F_anc = fused_feats[self._anchor_idx]
        raw, means, scales, quats, opac, (t, sg, rn, small) = self._geometry(params, F_anc)
        coeffs = self._coeffs(params, F_anc)
        out = splat_ssh(means, scales, quats, opac, coeffs, self.grid, self.cutoff, keep_cache=grad)
        v_gauss, cache = out if grad else (out, None)
        v_gauss[..., 0] += self.empty_bias
        fused = v_voxel + v_gauss

        terms = {}
        g_fused = np.zeros_like(fused) if grad else None
        g_vox = g_gs = None
        args = (fused, self.labels)
        if "ce" in self.terms:
            out = ce_loss(*args, self.ignore_label, return_grad=grad)
            terms["ce"] = out[0] if grad else out
            if grad:
                g_fused += out[1]
        if "lovasz" in self.terms:
            out = lovasz_loss(*args, self.ignore_label, return_grad=grad)
            terms["lovasz"] = out[0] if grad else out
            if grad:
                g_fused += out[1]
        if "scal" in self.terms:
            out = scal_loss(*args, "both", self.ignore_label, return_grad=grad)
            terms["scal"] = out[0] if grad else out
            if grad:
                g_fused += out[1]
        orth_val, g_orth = orth_loss_grad(params["sh_projection"], self.lam)
        if "orth" in self.terms:
            terms["orth"] = orth_val
        if "align" in self.terms:
            out = align_loss(v_voxel, v_gauss, self.anchors.positions, return_grad=grad)
            if grad:
                terms["align"], g_vox, g_gs = out
            else:
                terms["align"] = out
        breakdown = {name: float(terms.get(name, 0.0)) for name in LOSS_TERMS}
        total = float(sum(breakdown.values()))
        preds = {"v_voxel": v_voxel, "v_gauss": v_gauss, "fused": fused}
        if not grad:
            return total, breakdown, preds, None

        gv = g_fused if g_vox is None else g_fused + g_vox
        gg = g_fused if g_gs is None else g_fused + g_gs
        out = params.zeros_like()
        if "orth" in self.terms:
            out["sh_projection"] = g_orth

        d_means, d_scales, d_R, d_opac, d_coeffs = splat_ssh_backward(cache, gg)
        smin, smax = self.scale_range
        d_raw = np.zeros((self.k, HEAD_OUTPUTS))
        d_raw[:, 0:3] = d_means * self.grid.resolution * (1.0 - t * t)
        d_raw[:, 3:6] = d_scales * (smax - smin) * sg * (1.0 - sg)
        d_q = rotation_grad_to_quat(quats, d_R)
        radial = np.einsum("ka,ka->k", d_q, quats)
        d_r = (d_q - radial[:, None] * quats) / np.where(small, 1.0, rn)[:, None]
        d_r[small] = 0.0
        d_raw[:, 6:10] = d_r
        d_raw[:, 10] = d_opac * opac * (1.0 - opac)

        out["offsets"] = d_raw[:, 0:3]
        out["scales"] = d_raw[:, 3:6]
        out["rotations"] = d_raw[:, 6:10]
        out["opacities"] = d_raw[:, 10]
        out["gs_head_weight"] = d_raw.T @ F_anc
        out["gs_head_bias"] = d_raw.sum(axis=0)
        out["sh_coeffs"] = d_coeffs
        dc_flat = d_coeffs.reshape(self.k, -1)
        out["sh_projection"] = out["sh_projection"] + dc_flat.T @ F_anc
        d_anc = d_raw @ params["gs_head_weight"] + dc_flat @ params["sh_projection"]

        C = self.channels
        gv_flat = gv.reshape(-1, self.n_classes)
        ff_flat = fused_feats.reshape(-1, C)
        out["head_weight"] = gv_flat.T @ ff_flat
        out["head_bias"] = gv_flat.sum(axis=0)
        d_ff = gv @ Wh
        np.add.at(d_ff, self._anchor_idx, d_anc)
        p = self.planes
        out["tpv_weights"] = [
            np.einsum("xyzc,xyc->", d_ff, p.xy),
            np.einsum("xyzc,yzc->", d_ff, p.yz),
            np.einsum("xyzc,xzc->", d_ff, p.zx),
        ]
        return total, breakdown, preds, out

    def loss(self, params: ParamVector) -> float:
        return self.evaluate(params)[0]

    def loss_and_grad(self, params: ParamVector):
        total, _, _, g = self.evaluate(params, grad=True)
        return total, g

    def backward(self, params: ParamVector) -> ParamVector:
        return self.evaluate(params, grad=True)[3]


# optimisers -----------------------------------------------------------------


class Adam:
    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x, g, lr_scale=1.0):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return x - self.lr * lr_scale * m_hat / (np.sqrt(v_hat) + self.eps)


class GradientDescent:
    def __init__(self, size, lr):
        self.lr = lr

    def step(self, x, g, lr_scale=1.0):
        return x - self.lr * lr_scale * g


def make_optimizer(config: FitConfig, size):
    if config.optimizer == "adam":
        return Adam(size, config.step_size, config.beta1, config.beta2, config.adam_eps)
    return GradientDescent(size, config.step_size)


@dataclass
class FitRecord:
    iteration: int
    total: float
    terms: dict
    miou: float
    occ_iou: float
    gauss_occ_iou: float


@dataclass
class FitResult:
    params: ParamVector
    records: list = field(default_factory=list)

    @property
    def initial(self) -> FitRecord:
        return self.records[0]

    @property
    def final(self) -> FitRecord:
        return self.records[-1]


def _check_finite(breakdown, iteration):
    for name, value in breakdown.items():
        if not np.isfinite(value):
            raise DivergenceError(
                f"loss term {name!r} became {value} at iteration {iteration}", term=name, iteration=iteration
            )


def _record(problem, it, total, breakdown, preds) -> FitRecord:
    rep = compute_metrics(preds["fused"], problem.labels, problem.n_classes, problem.ignore_label)
    grep = compute_metrics(preds["v_gauss"], problem.labels, problem.n_classes, problem.ignore_label)
    return FitRecord(it, total, dict(breakdown), rep.miou, rep.occ_iou, grep.occ_iou)


def fit(problem: Problem, config: FitConfig, params: ParamVector | None = None, frozen=(), callback=None) -> FitResult:
    """Minimise the total loss by gradient descent.

    One record is produced per visited iterate, the first for the initial
    parameters. Groups listed in ``frozen`` keep their values.
    """
    if params is None:
        params = problem.init_params(np.random.default_rng(config.seed))
    params = params.copy()
    mask = np.ones(len(params))
    for name in frozen:
        if name not in params.layout:
            raise InvalidInputError(f"unknown parameter group {name!r}")
        mask[params.slice(name)] = 0.0
    opt = make_optimizer(config, len(params))
    result = FitResult(params)
    prev = None
    for it in range(config.iterations + 1):
        last = it == config.iterations
        total, breakdown, preds, g = problem.evaluate(params, grad=not last)
        _check_finite(breakdown, it)
        result.records.append(_record(problem, it, total, breakdown, preds))
        if callback is not None:
            callback(result.records[-1])
        if last:
            break
        if config.tolerance > 0 and prev is not None and abs(prev - total) < config.tolerance:
            break
        prev = total
        if not np.all(np.isfinite(g.data)):
            raise DivergenceError(f"non-finite gradient at iteration {it}", term="gradient", iteration=it)
        params.data[:] = opt.step(params.data, g.data * mask, params.lr_scale * mask)
    result.params = params
    return result


# gradient checking ----------------------------------------------------------


@dataclass
class GradCheck:
    max_rel_error: float
    coords: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray


def finite_diff_check(loss_fn, grad, x, coords=None, n_coords=64, step=1e-5, rng=None) -> GradCheck:
    """Compare an analytic gradient with central differences of ``loss_fn``.

    ``grad`` is the analytic gradient at ``x`` (flat). Relative error is
    ``|a - n| / (|a| + |n|)``; coordinates where that denominator is at most
    1e-8 count as exact.
    """
    if not step > 0:
        raise InvalidInputError(f"step must be positive, got {step}")
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float).ravel()
    if coords is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = rng.choice(x.size, size=min(n_coords, x.size), replace=False)
    coords = np.asarray(coords, dtype=int)
    numeric = np.empty(len(coords))
    for n, j in enumerate(coords):
        xp = x.copy()
        xp[j] += step
        fp = loss_fn(xp)
        xp[j] = x[j] - step
        fm = loss_fn(xp)
        numeric[n] = (fp - fm) / (2 * step)
    analytic = grad[coords]
    den = np.abs(analytic) + np.abs(numeric)
    rel = np.where(den > 1e-8, np.abs(analytic - numeric) / np.where(den > 1e-8, den, 1.0), 0.0)
    return GradCheck(float(rel.max(initial=0.0)), coords, analytic, numeric, rel)


def sample_coords(params: ParamVector, n_coords, rng, groups=None) -> np.ndarray:
    """Random flat indices spread evenly over the parameter groups."""
    groups = list(groups or params.names)
    base, extra = divmod(int(n_coords), len(groups))
    picked = []
    for i, name in enumerate(groups):
        sl = params.slice(name)
        size = sl.stop - sl.start
        share = base + (i < extra)
        picked.append(sl.start + rng.choice(size, size=min(share, size), replace=False))
    picked = np.concatenate(picked)
    # small groups cannot supply their share; top up from the other groups
    short = n_coords - len(picked)
    if short > 0:
        pool = np.setdiff1d(np.concatenate([np.arange(params.slice(n).start, params.slice(n).stop) for n in groups]), picked)
        picked = np.concatenate([picked, rng.choice(pool, size=min(short, len(pool)), replace=False)])
    return np.sort(picked)


def check_gradient(problem: Problem, params: ParamVector, n_coords=64, step=1e-5, seed=0) -> GradCheck:
    """Finite-difference check of :meth:`Problem.backward` over every parameter group."""
    rng = np.random.default_rng(seed)
    coords = sample_coords(params, n_coords, rng)
    g = problem.backward(params)
    return finite_diff_check(
        lambda flat: problem.loss(params.unflatten(flat)), g.data, params.data, coords=coords, step=step
    )
