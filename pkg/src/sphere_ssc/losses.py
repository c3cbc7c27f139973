"""Training losses on class-logit volumes.

All losses take logits shaped ``(..., N+1)`` and integer labels shaped
``(...)``. With ``return_grad=True`` they return ``(loss, dloss/dlogits)``.
Voxels labelled ``ignore_label`` are excluded everywhere.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .harmonics import orth_loss_grad

IGNORE_LABEL = 255
PROB_FLOOR = 1e-12
LOSS_TERMS = ("ce", "lovasz", "scal", "orth", "align")


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_backward(p, grad_p):
    """Map dL/dp to dL/dlogits for p = softmax(logits) along the last axis."""
    return p * (grad_p - np.sum(p * grad_p, axis=-1, keepdims=True))


def _flatten(pred, gt, ignore_label):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt)
    if pred.shape[:-1] != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} does not match labels {gt.shape}")
    P = pred.reshape(-1, pred.shape[-1])
    t = gt.reshape(-1).astype(np.int64)
    valid = t != ignore_label
    if np.any(t[valid] < 0) or np.any(t[valid] >= P.shape[1]):
        raise InvalidInputError(f"labels must lie in [0, {P.shape[1]}) or equal {ignore_label}")
    return P, t, valid


def ce_loss(pred, gt, ignore_label=IGNORE_LABEL, return_grad=False):
    """Mean softmax cross-entropy over non-ignored voxels (0 if none)."""
    P, t, valid = _flatten(pred, gt, ignore_label)
    n = int(valid.sum())
    grad = np.zeros_like(P)
    if n == 0:
        return (0.0, grad.reshape(np.shape(pred))) if return_grad else 0.0
    lsm = log_softmax(P[valid])
    tv = t[valid]
    loss = float(-lsm[np.arange(n), tv].mean())
    if not return_grad:
        return loss
    g = np.exp(lsm)
    g[np.arange(n), tv] -= 1.0
    grad[valid] = g / n
    return loss, grad.reshape(np.shape(pred))


def lovasz_grad(gt_sorted):
    """Gradient of the Lovasz extension of the Jaccard loss at a sorted 0/1 vector."""
    gt_sorted = np.asarray(gt_sorted, dtype=float)
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax_probs(probs, labels, return_grad=False):
    """Lovasz-softmax on already-normalised probabilities ``(n, N+1)``.

    Averages over the classes present in ``labels``; the sort permutation is
    held fixed for the gradient.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    grad = np.zeros_like(probs)
    present = np.unique(labels)
    if len(present) == 0:
        return (0.0, grad) if return_grad else 0.0
    total = 0.0
    for c in present:
        fg = (labels == c).astype(float)
        err = np.abs(fg - probs[:, c])
        perm = np.argsort(-err, kind="stable")
        lg = lovasz_grad(fg[perm])
        total += float(np.dot(err[perm], lg))
        if return_grad:
            grad[perm, c] += lg * np.where(fg[perm] > 0, -1.0, 1.0)
    loss = total / len(present)
    return (loss, grad / len(present)) if return_grad else loss


def lovasz_loss(pred, gt, ignore_label=IGNORE_LABEL, return_grad=False):
    P, t, valid = _flatten(pred, gt, ignore_label)
    grad = np.zeros_like(P)
    if not valid.any():
        return (0.0, grad.reshape(np.shape(pred))) if return_grad else 0.0
    p = softmax(P[valid])
    if not return_grad:
        return lovasz_softmax_probs(p, t[valid])
    loss, gp = lovasz_softmax_probs(p, t[valid], return_grad=True)
    grad[valid] = softmax_backward(p, gp)
    return loss, grad.reshape(np.shape(pred))


def _neg_log(x):
    return -np.log(max(x, PROB_FLOOR))


def _dneg_log(x):
    return -1.0 / x if x > PROB_FLOOR else 0.0


def _affinity_terms(p, t):
    """-(log P + log R + log S) for soft mass ``p`` against binary target ``t``.

    Returns ``(loss, dloss/dp)``; terms whose denominator vanishes are dropped.
    """
    A = float(np.dot(p, t))
    B = float(p.sum())
    T = float(t.sum())
    U = float((1.0 - t).sum())
    loss = 0.0
    g = np.zeros_like(p)
    if B > 0:
        prec = A / B
        loss += _neg_log(prec)
        g += _dneg_log(prec) * (t - prec) / B
    if T > 0:
        rec = A / T
        loss += _neg_log(rec)
        g += _dneg_log(rec) * t / T
    if U > 0:
        specificity = float(np.dot(1.0 - p, 1.0 - t)) / U
        loss += _neg_log(specificity)
        g += _dneg_log(specificity) * -(1.0 - t) / U
    return loss, g


def scal_loss(pred, gt, variant="both", ignore_label=IGNORE_LABEL, return_grad=False):
    """Scene-class affinity loss.

    ``semantic``: per class present in the labels, precision, recall and
    specificity of its soft mass; averaged over those classes.
    ``geometric``: the same three terms for occupied (1 - p_empty) vs empty.
    ``both`` sums the two variants.
    """
    if variant not in ("semantic", "geometric", "both"):
        raise InvalidInputError(f"unknown scal variant {variant!r}")
    P, t, valid = _flatten(pred, gt, ignore_label)
    grad = np.zeros_like(P)
    loss = 0.0
    if valid.any():
        p = softmax(P[valid])
        tv = t[valid]
        gp = np.zeros_like(p)
        if variant in ("semantic", "both"):
            classes = np.unique(tv)
            for c in classes:
                lc, gc = _affinity_terms(p[:, c], (tv == c).astype(float))
                loss += lc / len(classes)
                gp[:, c] += gc / len(classes)
        if variant in ("geometric", "both"):
            lg, gg = _affinity_terms(1.0 - p[:, 0], (tv != 0).astype(float))
            loss += lg
            gp[:, 0] -= gg
        grad[valid] = softmax_backward(p, gp)
    loss = float(loss)
    return (loss, grad.reshape(np.shape(pred))) if return_grad else loss


def _anchor_index(positions, spatial_shape):
    pos = np.asarray(positions)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise InvalidInputError("anchor positions must be (K, 3) voxel indices")
    if np.any(pos < 0) or np.any(pos >= np.asarray(spatial_shape)):
        raise InvalidInputError("anchor positions lie outside the grid")
    return tuple(pos.T)


def align_loss(v_voxel, v_gauss, anchors, return_grad=False):
    """Mean over anchors of KL(p || q) + KL(q || p) with p, q the branch softmaxes.

    ``anchors`` is an AnchorSet or a ``(K, 3)`` index array. Gradients are
    returned for both volumes.
    """
    a = np.asarray(v_voxel, dtype=float)
    b = np.asarray(v_gauss, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"branch volumes differ in shape: {a.shape} vs {b.shape}")
    positions = getattr(anchors, "positions", anchors)
    idx = _anchor_index(positions, a.shape[:-1])
    K = len(idx[0])
    if K == 0:
        zero = 0.0
        return (zero, np.zeros_like(a), np.zeros_like(b)) if return_grad else zero
    p, q = softmax(a[idx]), softmax(b[idx])
    pf, qf = np.maximum(p, PROB_FLOOR), np.maximum(q, PROB_FLOOR)
    diff = np.log(pf) - np.log(qf)
    loss = float(np.sum((p - q) * diff) / K)
    if not return_grad:
        return loss
    with np.errstate(divide="ignore", invalid="ignore"):
        gp = diff + np.where(p > PROB_FLOOR, (p - q) / p, 0.0)
        gq = -diff - np.where(q > PROB_FLOOR, (p - q) / q, 0.0)
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    np.add.at(ga, idx, softmax_backward(p, gp) / K)
    np.add.at(gb, idx, softmax_backward(q, gq) / K)
    return loss, ga, gb


def total_loss(terms: dict) -> tuple[float, dict]:
    """Unweighted sum of the five loss terms; missing terms count as zero."""
    unknown = set(terms) - set(LOSS_TERMS)
    if unknown:
        raise InvalidInputError(f"unknown loss terms {sorted(unknown)}")
    breakdown = {name: float(terms.get(name, 0.0)) for name in LOSS_TERMS}
    return float(sum(breakdown.values())), breakdown


def compute_losses(v_voxel, v_gauss, gt, anchors, proj, ignore_label=IGNORE_LABEL):
    """All five terms on a consistent set of predictions; returns ``(total, breakdown)``.

    Cross-entropy, Lovasz and scene-class affinity supervise the fused
    prediction; alignment compares the two branches at the anchors.
    """
    fused = np.asarray(v_voxel) + np.asarray(v_gauss)
    terms = {
        "ce": ce_loss(fused, gt, ignore_label),
        "lovasz": lovasz_loss(fused, gt, ignore_label),
        "scal": scal_loss(fused, gt, "both", ignore_label),
        "orth": orth_loss_grad(proj.weights, proj.lam)[0],
        "align": align_loss(v_voxel, v_gauss, anchors),
    }
    return total_loss(terms)
