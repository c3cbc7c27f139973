import numpy as np
import pytest

from sphere_ssc.errors import InvalidInputError
from sphere_ssc.losses import IGNORE_LABEL
from sphere_ssc.metrics import compute_metrics


def counting_oracle(pred, gt, n):
    tp, fp, fn = [0] * n, [0] * n, [0] * n
    otp = ofp = ofn = 0
    for p, t in zip(pred.ravel(), gt.ravel()):
        if t == IGNORE_LABEL:
            continue
        for c in range(n):
            tp[c] += p == c and t == c
            fp[c] += p == c and t != c
            fn[c] += p != c and t == c
        otp += p != 0 and t != 0
        ofp += p != 0 and t == 0
        ofn += p == 0 and t != 0
    ious = [tp[c] / (tp[c] + fp[c] + fn[c]) if tp[c] + fp[c] + fn[c] else 0.0 for c in range(n)]
    seen = [ious[c] for c in range(1, n) if tp[c] + fp[c] + fn[c]]
    miou = sum(seen) / len(seen) if seen else 0.0
    occ = otp / (otp + ofp + ofn) if otp + ofp + ofn else 0.0
    return tp, fp, fn, ious, miou, occ


def test_perfect_prediction():
    gt = np.array([0, 1, 2, 2, 1, 0, 1, 2]).reshape(2, 2, 2)
    rep = compute_metrics(gt, gt, 3)
    assert rep.miou == 1.0 and rep.occ_iou == 1.0
    np.testing.assert_array_equal(rep.iou[1:], 1.0)


def test_disjoint_occupancy():
    gt = np.array([1, 1, 0, 0]).reshape(2, 2, 1)
    pred = np.array([0, 0, 2, 1]).reshape(2, 2, 1)
    assert compute_metrics(pred, gt, 3).occ_iou == 0.0


def test_exhaustive_counting_oracle(rng):
    for _ in range(20):
        gt = rng.integers(0, 3, (4, 4, 2))
        gt[rng.random(gt.shape) < 0.1] = IGNORE_LABEL
        logits = rng.standard_normal((4, 4, 2, 3))
        rep = compute_metrics(logits, gt)
        tp, fp, fn, ious, miou, occ = counting_oracle(np.argmax(logits, -1), gt, 3)
        np.testing.assert_array_equal(rep.tp, tp)
        np.testing.assert_array_equal(rep.fp, fp)
        np.testing.assert_array_equal(rep.fn, fn)
        np.testing.assert_allclose(rep.iou, ious, rtol=1e-15)
        assert rep.miou == pytest.approx(miou, rel=1e-15)
        assert rep.occ_iou == pytest.approx(occ, rel=1e-15)


def test_argmax_invariance_to_per_voxel_shift(rng):
    logits = rng.standard_normal((3, 3, 2, 4))
    gt = rng.integers(0, 4, (3, 3, 2))
    shifted = logits + rng.standard_normal((3, 3, 2, 1)) * 10
    assert compute_metrics(logits, gt).to_dict() == compute_metrics(shifted, gt).to_dict()


def test_fuse_order_does_not_change_metrics(rng):
    from sphere_ssc.heads import fuse

    a, b = rng.standard_normal((3, 3, 2, 4)), rng.standard_normal((3, 3, 2, 4))
    gt = rng.integers(0, 4, (3, 3, 2))
    assert compute_metrics(fuse(a, b), gt).to_dict() == compute_metrics(fuse(b, a), gt).to_dict()


def test_report_serialisations():
    gt = np.array([0, 1, 2, 2]).reshape(2, 2, 1)
    rep = compute_metrics(np.array([0, 1, 1, 2]).reshape(2, 2, 1), gt, 3)
    text = dict(line.split(" = ") for line in rep.to_text().splitlines())
    assert float(text["miou"]) == rep.miou and int(text["class_2_fn"]) == 1
    d = rep.to_dict()
    assert d["classes"][1] == {"class": 1, "tp": 1, "fp": 1, "fn": 0, "iou": 0.5}


def test_metrics_validation():
    with pytest.raises(InvalidInputError):
        compute_metrics(np.zeros((2, 2, 2)), np.zeros((2, 2, 1), int), 2)
    with pytest.raises(InvalidInputError):
        compute_metrics(np.zeros((2, 2, 1)), np.zeros((2, 2, 1), int))
    with pytest.raises(InvalidInputError):
        compute_metrics(np.full((2, 2, 1), 5), np.zeros((2, 2, 1), int), 3)
