# Losses on logit volumes and the usual scene-completion metrics

# %%
import numpy as np

from sphere_ssc import align_loss, ce_loss, compute_metrics, lovasz_loss, scal_loss

rng = np.random.default_rng(0)
gt = rng.integers(0, 4, (8, 8, 2))
gt[0, :, :] = 255  # unlabelled voxels are ignored everywhere

logits = rng.standard_normal((8, 8, 2, 4))
good = logits + 6.0 * np.eye(4)[np.where(gt == 255, 0, gt)]

# %%
for name, fn in (("ce", ce_loss), ("lovasz", lovasz_loss), ("scal", scal_loss)):
    print(f"{name:7s} random {fn(logits, gt):.3f}  close {fn(good, gt):.3f}")

# %%
# Symmetric KL between the two branches at a few anchor voxels.
anchors = np.array([[1, 1, 0], [4, 5, 1], [7, 2, 0]])
print("align", align_loss(logits, good, anchors), align_loss(good, good, anchors))
p, q = np.log([0.5, 0.5]), np.log([0.9, 0.1])
print("two-class example", align_loss(p.reshape(1, 1, 1, 2), q.reshape(1, 1, 1, 2), np.zeros((1, 3), int)))

# %%
rep = compute_metrics(good, gt)
print(f"mIoU {rep.miou:.3f}  occupancy IoU {rep.occ_iou:.3f}")
print(rep.to_text().splitlines()[:5])
