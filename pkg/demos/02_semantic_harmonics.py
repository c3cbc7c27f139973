# Direction-dependent semantics with real spherical harmonics

# %%
import numpy as np

from sphere_ssc.harmonics import ShProjection, eval_ssh, expand_semantics, n_basis, orth_loss, sh_basis

# Degree L gives (L+1)^2 basis functions; L = 2 is the default.
for L in range(5):
    print(L, n_basis(L))

# %%
up = np.array([0.0, 0.0, 1.0])
print(sh_basis(1, up))  # only Y_10 is non-zero at the pole

# %%
# A coefficient block is ((L+1)^2, channels). With only the constant term
# the field looks the same from every direction; adding an l = 1 term makes
# class 1 win on one side and class 2 on the other.
coeffs = np.zeros((4, 3))
coeffs[0] = [0.0, 1.0, 1.0]
coeffs[3] = [0.0, 1.5, -1.5]  # Y_11 ~ x
for d in ([1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]):
    print(d, eval_ssh(coeffs, np.array(d)).round(3))

# %%
# Coefficients come from anchor features through one projection matrix W.
rng = np.random.default_rng(0)
proj = ShProjection.init(degree=2, n_channels=3, in_features=32, rng=rng)
F = rng.standard_normal((5, 32))
print(expand_semantics(F, proj).shape)

# The soft orthogonality penalty keeps the rows of W distinct.
print("orthonormal rows:", orth_loss(proj))
proj.weights = proj.weights + 0.1 * rng.standard_normal(proj.weights.shape)
print("perturbed:", orth_loss(proj))
