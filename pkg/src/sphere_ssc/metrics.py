"""Semantic scene completion metrics: per-class IoU, mIoU and occupancy IoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .losses import IGNORE_LABEL


@dataclass
class MetricsReport:
    tp: np.ndarray  # (N+1,) per class, class 0 = empty
    fp: np.ndarray
    fn: np.ndarray
    iou: np.ndarray
    miou: float
    occ_tp: int
    occ_fp: int
    occ_fn: int
    occ_iou: float

    @property
    def n_classes(self) -> int:
        return len(self.tp)

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "occupancy_iou": self.occ_iou,
            "occupancy": {"tp": self.occ_tp, "fp": self.occ_fp, "fn": self.occ_fn},
            "classes": [
                {"class": c, "tp": int(self.tp[c]), "fp": int(self.fp[c]), "fn": int(self.fn[c]), "iou": float(self.iou[c])}
                for c in range(self.n_classes)
            ],
        }

    def to_text(self) -> str:
        lines = [
            f"miou = {self.miou!r}",
            f"occupancy_iou = {self.occ_iou!r}",
            f"occupancy_tp = {self.occ_tp}",
            f"occupancy_fp = {self.occ_fp}",
            f"occupancy_fn = {self.occ_fn}",
        ]
        for c in range(self.n_classes):
            lines += [
                f"class_{c}_tp = {int(self.tp[c])}",
                f"class_{c}_fp = {int(self.fp[c])}",
                f"class_{c}_fn = {int(self.fn[c])}",
                f"class_{c}_iou = {float(self.iou[c])!r}",
            ]
        return "\n".join(lines) + "\n"


def _iou(tp, fp, fn):
    tp, fp, fn = (np.asarray(v, dtype=float) for v in (tp, fp, fn))
    den = tp + fp + fn
    return np.where(den > 0, tp / np.where(den > 0, den, 1.0), 0.0)


def compute_metrics(pred, gt, n_classes=None, ignore_label=IGNORE_LABEL) -> MetricsReport:
    """Score a prediction (logits ``(..., N+1)`` or labels ``(...)``) against labels.

    mIoU averages the IoU of semantic classes 1..N over those that occur in
    the prediction or the ground truth (non-zero denominator).
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt).astype(np.int64)
    if pred.shape == gt.shape:
        labels = pred.astype(np.int64)
        if n_classes is None:
            raise InvalidInputError("n_classes is required when scoring label predictions")
    elif pred.shape[:-1] == gt.shape:
        n_classes = pred.shape[-1] if n_classes is None else n_classes
        labels = np.argmax(pred, axis=-1)
    else:
        raise InvalidInputError(f"prediction {pred.shape} does not match labels {gt.shape}")
    valid = gt != ignore_label
    p, t = labels[valid], gt[valid]
    if np.any(t < 0) or np.any(t >= n_classes) or np.any(p < 0) or np.any(p >= n_classes):
        raise InvalidInputError(f"labels must lie in [0, {n_classes})")
    conf = np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    tp = np.diag(conf).astype(np.int64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    iou = _iou(tp, fp, fn)
    seen = (tp + fp + fn)[1:] > 0
    miou = float(iou[1:][seen].mean()) if seen.any() else 0.0
    po, to = p != 0, t != 0
    occ_tp = int(np.sum(po & to))
    occ_fp = int(np.sum(po & ~to))
    occ_fn = int(np.sum(~po & to))
    occ_iou = float(_iou(occ_tp, occ_fp, occ_fn))
    return MetricsReport(tp, fp, fn, iou, miou, occ_tp, occ_fp, occ_fn, occ_iou)
