# Semantic Gaussians and splatting onto a voxel grid

# %%
import numpy as np

from sphere_ssc import SemanticGaussian, VoxelGrid, splat
from sphere_ssc.gaussians import eval_gaussian

# A 16 x 16 x 4 grid of 0.2 m voxels; voxel (i, j, k) sits at origin + 0.2 * (i + 0.5, ...)
grid = VoxelGrid((16, 16, 4), 0.2)
print(grid.dims, grid.center(0, 0, 0))

# %%
# Each Gaussian carries a class vector instead of a colour. Here there are
# three channels: empty, road, car.
road = SemanticGaussian(mean=[1.6, 1.6, 0.1], scale=[1.0, 1.0, 0.1], rotation=[1, 0, 0, 0], opacity=0.9, semantics=[0, 1, 0])
turn = np.array([np.cos(np.pi / 8), 0, 0, np.sin(np.pi / 8)])  # 45 degrees about z
car = SemanticGaussian(mean=[2.2, 1.2, 0.5], scale=[0.5, 0.2, 0.2], rotation=turn, opacity=1.0, semantics=[0, 0, 1])
print("car covariance\n", car.covariance.round(4))

# %%
# The contribution falls off with Mahalanobis distance; along a principal
# axis it is exactly exp(-d^2 / 2s^2) of the peak.
axis = car.rotation_matrix[:, 0]
print(eval_gaussian(car, car.mean + 0.5 * axis)[2], np.exp(-0.5))

# %%
vol = splat([road, car], grid)  # default cutoff: 3 standard deviations
full = splat([road, car], grid, cutoff=np.inf)
print("volume", vol.shape, "largest culling error", np.abs(vol - full).max())

labels = np.argmax(vol, axis=-1)
labels[vol.max(axis=-1) < 0.05] = 0
for k in range(grid.dims[2]):
    print(f"z = {k}")
    print("\n".join("".join(".rc"[v] for v in row) for row in labels[:, :, k].T))

# %%
# Summation runs in a canonical order, so shuffling the input list does not
# change a single bit.
print(np.array_equal(splat([car, road], grid), vol))
