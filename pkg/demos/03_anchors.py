# From a labelled scene to focal anchors and initial Gaussians

# %%
import numpy as np

from sphere_ssc import GaussianHead, gen_features, gen_scene, init_gaussians, select_anchors, similarity_map, tpv_pool
from sphere_ssc.scene import broadcast_tpv, fused_features
from sphere_ssc.synth import MINI_STREET_CLASSES

labels, grid, n = gen_scene("mini-street", seed=0)
print(grid.dims, dict(zip(MINI_STREET_CLASSES, np.bincount(labels.ravel()))))

# %%
# Features stand in for a learned encoder: one unit prototype per class.
feats = gen_features(labels, n + 1, channels=32, sigma=0.05, seed=0)
planes = tpv_pool(feats)  # mean along each axis
field = broadcast_tpv(planes)
sim = similarity_map(feats, field)  # dot product; "cosine" also available
print("similarity range", sim.min().round(3), sim.max().round(3))

# %%
# Voxels where local and global features agree the most become anchors.
anchors = select_anchors(sim, fused_features(feats, planes), k=64)
picked = labels[tuple(anchors.positions.T)]
print("anchor classes", dict(zip(*np.unique(picked, return_counts=True))))

# %%
head = GaussianHead.init(32, np.random.default_rng(0), std=0.1)
gaussians = init_gaussians(anchors, head, grid)
g = gaussians[0]
print(len(gaussians), g.mean.round(3), g.scale.round(3), round(g.opacity, 3))
