"""Real spherical harmonics and the semantic SH field built on them.

Basis functions are the orthonormal real harmonics without the
Condon-Shortley phase, ordered (l, m) = (0,0), (1,-1), (1,0), (1,1), ...
so that flat index = l*l + l + m. Each is stored as a homogeneous
polynomial in the Cartesian components of the unit direction, which also
gives exact gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UnsupportedDegreeError

MAX_DEGREE = 4
DEFAULT_DEGREE = 2
DEFAULT_ORTH_LAMBDA = 1e-6
Y00 = 0.28209479177387814

# (px, py, pz, coefficient) monomials per basis function
_SH_TERMS = (
    ((0, 0, 0, 0.28209479177387814),),
    ((0, 1, 0, 0.4886025119029199),),
    ((0, 0, 1, 0.4886025119029199),),
    ((1, 0, 0, 0.4886025119029199),),
    ((1, 1, 0, 1.0925484305920792),),
    ((0, 1, 1, 1.0925484305920792),),
    ((2, 0, 0, -0.31539156525252005), (0, 2, 0, -0.31539156525252005), (0, 0, 2, 0.6307831305050401)),
    ((1, 0, 1, 1.0925484305920792),),
    ((2, 0, 0, 0.5462742152960396), (0, 2, 0, -0.5462742152960396)),
    ((2, 1, 0, 1.7701307697799304), (0, 3, 0, -0.5900435899266435)),
    ((1, 1, 1, 2.890611442640554),),
    ((2, 1, 0, -0.4570457994644658), (0, 3, 0, -0.4570457994644658), (0, 1, 2, 1.828183197857863)),
    ((2, 0, 1, -1.1195289977703462), (0, 2, 1, -1.1195289977703462), (0, 0, 3, 0.7463526651802308)),
    ((3, 0, 0, -0.4570457994644658), (1, 2, 0, -0.4570457994644658), (1, 0, 2, 1.828183197857863)),
    ((2, 0, 1, 1.445305721320277), (0, 2, 1, -1.445305721320277)),
    ((3, 0, 0, 0.5900435899266435), (1, 2, 0, -1.7701307697799304)),
    ((3, 1, 0, 2.5033429417967046), (1, 3, 0, -2.5033429417967046)),
    ((2, 1, 1, 5.310392309339791), (0, 3, 1, -1.7701307697799304)),
    ((3, 1, 0, -0.9461746957575601), (1, 3, 0, -0.9461746957575601), (1, 1, 2, 5.6770481745453605)),
    ((2, 1, 1, -2.0071396306718676), (0, 3, 1, -2.0071396306718676), (0, 1, 3, 2.676186174229157)),
    (
        (4, 0, 0, 0.31735664074561293), (2, 2, 0, 0.6347132814912259), (2, 0, 2, -2.5388531259649034),
        (0, 4, 0, 0.31735664074561293), (0, 2, 2, -2.5388531259649034), (0, 0, 4, 0.8462843753216345),
    ),
    ((3, 0, 1, -2.0071396306718676), (1, 2, 1, -2.0071396306718676), (1, 0, 3, 2.676186174229157)),
    (
        (4, 0, 0, -0.47308734787878004), (2, 0, 2, 2.8385240872726802),
        (0, 4, 0, 0.47308734787878004), (0, 2, 2, -2.8385240872726802),
    ),
    ((3, 0, 1, 1.7701307697799304), (1, 2, 1, -5.310392309339791)),
    ((4, 0, 0, 0.6258357354491761), (2, 2, 0, -3.755014412695057), (0, 4, 0, 0.6258357354491761)),
)


def n_basis(degree: int) -> int:
    return (degree + 1) ** 2


def lm_index(l: int, m: int) -> int:
    return l * l + l + m


def basis_degrees(degree: int) -> np.ndarray:
    """Degree l of each flat basis index up to ``degree``."""
    return np.concatenate([np.full(2 * l + 1, l) for l in range(degree + 1)])


def _check_degree(degree):
    if not 0 <= degree <= MAX_DEGREE or int(degree) != degree:
        raise UnsupportedDegreeError(f"SH degree must be an integer in [0, {MAX_DEGREE}], got {degree}")


def _powers(v, top):
    # v: (n,) -> (top+1, n)
    out = np.ones((top + 1,) + v.shape)
    for p in range(1, top + 1):
        out[p] = out[p - 1] * v
    return out


def sh_basis_batch(degree: int, dirs: np.ndarray, grad: bool = False):
    """Basis values for ``(n, 3)`` directions, shape ``(n, (L+1)^2)``.

    Directions are taken as given (no normalisation check). With
    ``grad=True`` also returns the Cartesian gradient of each polynomial,
    shape ``(n, (L+1)^2, 3)``.
    """
    _check_degree(degree)
    dirs = np.asarray(dirs, dtype=float)
    nb = n_basis(degree)
    px, py, pz = (_powers(dirs[:, a], max(degree, 1)) for a in range(3))
    vals = np.zeros((len(dirs), nb))
    grads = np.zeros((len(dirs), nb, 3)) if grad else None
    for b in range(nb):
        for i, j, k, c in _SH_TERMS[b]:
            vals[:, b] += c * px[i] * py[j] * pz[k]
            if grad:
                if i:
                    grads[:, b, 0] += c * i * px[i - 1] * py[j] * pz[k]
                if j:
                    grads[:, b, 1] += c * j * px[i] * py[j - 1] * pz[k]
                if k:
                    grads[:, b, 2] += c * k * px[i] * py[j] * pz[k - 1]
    return (vals, grads) if grad else vals


def _check_direction(direction):
    d = np.asarray(direction, dtype=float)
    if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise InvalidInputError(f"direction must be a unit 3-vector, got {direction}")
    return d


def sh_basis(degree: int, direction) -> np.ndarray:
    """Real orthonormal SH values Y_lm(direction) for l <= degree."""
    _check_degree(degree)
    d = _check_direction(direction)
    return sh_basis_batch(degree, d[None])[0]


@dataclass
class ShProjection:
    """Dense map from anchor features (C) to flattened SH coefficients.

    ``weights`` has shape ``((L+1)^2 * n_channels, C)``; row ``b * n_channels + ch``
    produces the coefficient of basis ``b`` for semantic channel ``ch``.
    """

    weights: np.ndarray
    degree: int = DEFAULT_DEGREE
    lam: float = DEFAULT_ORTH_LAMBDA

    def __post_init__(self):
        _check_degree(self.degree)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[0] % n_basis(self.degree):
            raise InvalidInputError(
                f"projection needs a multiple of {n_basis(self.degree)} rows, got shape {self.weights.shape}"
            )
        if self.lam < 0:
            raise InvalidInputError("orthogonality weight must be non-negative")

    @property
    def n_channels(self) -> int:
        return self.weights.shape[0] // n_basis(self.degree)

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def init(cls, degree, n_channels, in_features, rng, lam=DEFAULT_ORTH_LAMBDA):
        """Rows orthonormal when they fit in the feature dimension, else scaled Gaussian."""
        rows = n_basis(degree) * n_channels
        A = rng.standard_normal((max(rows, in_features), min(rows, in_features)))
        if rows <= in_features:
            Q, _ = np.linalg.qr(A)
            W = Q.T
        else:
            W = A / np.sqrt(in_features)
        return cls(W, degree, lam)


def expand_semantics(anchor_features, proj: ShProjection) -> np.ndarray:
    """Per-anchor SH coefficients ``(K, (L+1)^2, n_channels)`` = W @ feature."""
    F = np.atleast_2d(np.asarray(anchor_features, dtype=float))
    if F.shape[1] != proj.in_features:
        raise InvalidInputError(
            f"anchor features have {F.shape[1]} channels, projection expects {proj.in_features}"
        )
    return (F @ proj.weights.T).reshape(len(F), n_basis(proj.degree), proj.n_channels)


def eval_ssh(coeffs, direction) -> np.ndarray:
    """Sum over (l, m) of c_lm * Y_lm(direction) for a ``((L+1)^2, N)`` coefficient block."""
    coeffs = np.asarray(coeffs, dtype=float)
    nb = coeffs.shape[0]
    degree = int(round(np.sqrt(nb))) - 1
    if n_basis(degree) != nb:
        raise InvalidInputError(f"coefficient block has {nb} rows, not a square count")
    return sh_basis(degree, direction) @ coeffs


def orth_residual(weights) -> np.ndarray:
    W = np.asarray(weights, dtype=float)
    return W @ W.T - np.eye(W.shape[0])


def orth_loss(proj: ShProjection) -> float:
    """lam * sum_ij |(W W^T - I)_ij|."""
    return float(proj.lam * np.abs(orth_residual(proj.weights)).sum())


def orth_loss_grad(weights, lam) -> tuple[float, np.ndarray]:
    """Loss and gradient w.r.t. W; the subgradient of |x| at 0 is taken as 0."""
    W = np.asarray(weights, dtype=float)
    res = orth_residual(W)
    S = np.sign(res)
    return float(lam * np.abs(res).sum()), lam * (S + S.T) @ W
