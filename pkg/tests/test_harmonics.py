import numpy as np
import pytest
from scipy.special import sph_harm_y

from sphere_ssc.errors import InvalidInputError, UnsupportedDegreeError
from sphere_ssc.harmonics import (
    MAX_DEGREE,
    Y00,
    ShProjection,
    eval_ssh,
    expand_semantics,
    lm_index,
    n_basis,
    orth_loss,
    orth_loss_grad,
    orth_residual,
    sh_basis,
    sh_basis_batch,
)


def unit_vectors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def real_sh_oracle(l, m, d):
    """Real harmonics from scipy's complex ones, Condon-Shortley phase removed."""
    theta = np.arccos(np.clip(d[2], -1, 1))
    phi = np.arctan2(d[1], d[0])
    Y = sph_harm_y(l, abs(m), theta, phi)
    if m == 0:
        return Y.real
    sign = (-1) ** m
    return np.sqrt(2) * sign * (Y.real if m > 0 else Y.imag)


def quadrature_gram(L, n_theta=12, n_phi=24):
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st_ = np.sqrt(1 - ct**2)
    dirs = np.stack([st_ * np.cos(ph), st_ * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    weights = (w[:, None] * np.full(n_phi, 2 * np.pi / n_phi)).ravel()
    Y = sh_basis_batch(L, dirs)
    return (Y * weights[:, None]).T @ Y


def test_counts_and_index():
    assert [n_basis(L) for L in range(5)] == [1, 4, 9, 16, 25]
    assert lm_index(0, 0) == 0 and lm_index(1, -1) == 1 and lm_index(2, 2) == 8 and lm_index(4, 4) == 24


def test_degree_zero_constant(rng):
    for d in unit_vectors(rng, 10):
        np.testing.assert_allclose(sh_basis(0, d), [0.28209479177], atol=1e-11)
    assert Y00 == pytest.approx(1 / (2 * np.sqrt(np.pi)), abs=1e-16)


def test_pole_values():
    y = sh_basis(1, [0.0, 0.0, 1.0])
    assert y[lm_index(1, 0)] == pytest.approx(np.sqrt(3 / (4 * np.pi)), abs=1e-12)
    assert y[lm_index(1, 0)] == pytest.approx(0.48860251, abs=1e-8)
    assert y[lm_index(1, -1)] == 0 and y[lm_index(1, 1)] == 0


def test_matches_scipy_oracle(rng):
    for d in unit_vectors(rng, 25):
        y = sh_basis(MAX_DEGREE, d)
        for l in range(MAX_DEGREE + 1):
            for m in range(-l, l + 1):
                assert y[lm_index(l, m)] == pytest.approx(real_sh_oracle(l, m, d), abs=1e-12)


def test_quadrature_orthonormality():
    G = quadrature_gram(MAX_DEGREE)
    assert np.abs(G - np.eye(n_basis(MAX_DEGREE))).max() < 1e-6


def test_parity(rng):
    sign = np.concatenate([np.full(2 * l + 1, (-1.0) ** l) for l in range(MAX_DEGREE + 1)])
    for d in unit_vectors(rng, 20):
        np.testing.assert_allclose(sh_basis(MAX_DEGREE, -d), sign * sh_basis(MAX_DEGREE, d), atol=1e-13)


def test_polynomial_gradients(rng):
    dirs = unit_vectors(rng, 5)
    _, grads = sh_basis_batch(MAX_DEGREE, dirs, grad=True)
    h = 1e-6
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        numeric = (sh_basis_batch(MAX_DEGREE, dirs + e) - sh_basis_batch(MAX_DEGREE, dirs - e)) / (2 * h)
        np.testing.assert_allclose(grads[:, :, a], numeric, atol=1e-7)


def test_invalid_direction_and_degree():
    with pytest.raises(InvalidInputError):
        sh_basis(2, [1.0, 1.0, 0.0])
    with pytest.raises(UnsupportedDegreeError):
        sh_basis(5, [1.0, 0.0, 0.0])
    assert issubclass(UnsupportedDegreeError, InvalidInputError)


def test_expand_semantics_examples(rng):
    proj = ShProjection(np.eye(9), degree=2)
    f = rng.standard_normal(9)
    np.testing.assert_array_equal(expand_semantics(f, proj)[0], f.reshape(9, 1))
    proj = ShProjection(rng.standard_normal((9 * 3, 5)), degree=2)
    np.testing.assert_array_equal(expand_semantics(np.zeros((2, 5)), proj), np.zeros((2, 9, 3)))
    F = rng.standard_normal((4, 5))
    expected = np.array([[sum(proj.weights[r, c] * F[k, c] for c in range(5)) for r in range(27)] for k in range(4)])
    np.testing.assert_allclose(expand_semantics(F, proj), expected.reshape(4, 9, 3), atol=1e-13)
    with pytest.raises(InvalidInputError):
        expand_semantics(np.zeros((1, 4)), proj)
    with pytest.raises(InvalidInputError):
        ShProjection(np.zeros((10, 3)), degree=2)


def test_eval_ssh_examples(rng):
    c = np.zeros((9, 3))
    c[0] = [1.0, -2.0, 0.5]
    vals = np.array([eval_ssh(c, d) for d in unit_vectors(rng, 1000)])
    assert np.all(vals.max(axis=0) - vals.min(axis=0) < 1e-12)
    np.testing.assert_allclose(vals[0], c[0] * 0.28209479, atol=1e-8)

    d = unit_vectors(rng, 1)[0]
    Y = sh_basis(2, d)
    coeffs = np.outer(Y, np.eye(3)[1])
    np.testing.assert_allclose(eval_ssh(coeffs, d), [0, np.sum(Y**2), 0], atol=1e-13)

    odd = np.zeros((4, 2))
    odd[1:] = rng.standard_normal((3, 2))
    np.testing.assert_allclose(eval_ssh(odd, -d), -eval_ssh(odd, d), atol=1e-14)


def test_orth_loss_examples(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((6, 4)))
    assert orth_loss(ShProjection(Q.T, degree=1)) < 1e-12  # orthonormal rows
    W = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert orth_loss_grad(W, 1.0)[0] == 2.0
    W = rng.standard_normal((9, 7))
    explicit = sum(abs(sum(W[i, c] * W[j, c] for c in range(7)) - (i == j)) for i in range(9) for j in range(9))
    assert orth_loss(ShProjection(W, degree=2, lam=1e-6)) == pytest.approx(1e-6 * explicit, rel=1e-12)
    assert orth_loss(ShProjection(W, degree=2, lam=3e-6)) == pytest.approx(3 * orth_loss(ShProjection(W, degree=2, lam=1e-6)), rel=1e-12)


def test_orth_loss_gradient(rng):
    W = rng.standard_normal((4, 3))
    assert np.abs(orth_residual(W)).min() > 1e-3
    _, g = orth_loss_grad(W, 1.0)
    h = 1e-6
    num = np.zeros_like(W)
    for idx in np.ndindex(*W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        num[idx] = (orth_loss_grad(Wp, 1.0)[0] - orth_loss_grad(Wm, 1.0)[0]) / (2 * h)
    np.testing.assert_allclose(g, num, rtol=1e-5)


def test_projection_init_orthonormal_when_possible(rng):
    proj = ShProjection.init(1, 2, 16, rng)
    assert np.abs(orth_residual(proj.weights)).max() < 1e-12
    wide = ShProjection.init(2, 4, 8, rng)
    assert wide.weights.shape == (36, 8)
