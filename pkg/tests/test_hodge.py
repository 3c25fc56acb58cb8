import numpy as np
import pytest

from toruslab import hodge
from toruslab.mesh import build_grid, constant_field


def test_d1_d0_vanishes():
    g = build_grid(5)
    d0, d1 = hodge.exterior_derivative_0(g), hodge.exterior_derivative_1(g)
    assert abs(d1 @ d0).max() == 0


def test_flat_gram_closed_form(flat_matrix):
    # constant G: the harmonic forms are dx^i, Q1 = sqrt(det G) G^-1 and Q2 = G / sqrt(det G)
    f = constant_field(flat_matrix, 8)
    forms = hodge.standard_basis(f)
    q1 = hodge.gram_matrix(forms, f).matrix
    q2 = hodge.dual_gram(forms, f).matrix
    sd = np.sqrt(np.linalg.det(flat_matrix))
    assert np.allclose(q1, sd * np.linalg.inv(flat_matrix), atol=1e-10)
    assert np.allclose(q2, flat_matrix / sd, atol=1e-8)
    for form, e in zip(forms, np.eye(3)):
        assert np.allclose(form.cochain, hodge.reference_form(e, f.grid), atol=1e-10)


def test_periods_are_exact(conformal16):
    for nu in [(1, 0, 0), (0, -2, 1), (3, 1, -1)]:
        form = hodge.harmonic_representative(nu, conformal16)
        assert np.allclose(hodge.discrete_periods(form.cochain), nu, atol=1e-12)
        assert form.residual < 1e-8


def test_harmonic_form_minimises_energy(conformal16):
    form = hodge.harmonic_representative((1, 0, 0), conformal16)
    ops = hodge.operators(conformal16)
    rng = np.random.default_rng(0)
    e0 = hodge.l2_energy_norm(form.cochain, conformal16)
    for _ in range(3):
        bump = (ops.d0 @ rng.standard_normal(conformal16.grid.n_vertices)).reshape(form.cochain.shape) * 1e-2
        assert hodge.l2_energy_norm(form.cochain + bump, conformal16) > e0


def test_linearity(conformal16):
    basis = hodge.standard_basis(conformal16)
    direct = hodge.harmonic_representative((2, -1, 1), conformal16)
    combo = hodge.combine(basis, (2, -1, 1))
    assert np.allclose(direct.cochain, combo.cochain, atol=1e-8)
    assert combo.periods == (2, -1, 1)


def test_gram_symmetric_positive(conformal16):
    forms = hodge.standard_basis(conformal16)
    q = hodge.gram_matrix(forms, conformal16).matrix
    assert np.array_equal(q, q.T)
    assert np.linalg.eigvalsh(q).min() > 0


def test_dual_determinant_identity_perturbed(conformal16):
    forms = hodge.standard_basis(conformal16)
    prod = hodge.gram_matrix(forms, conformal16).det * hodge.dual_gram(forms, conformal16).det
    assert abs(prod - 1) < 5e-3


def test_gram_transforms_under_basis_change(conformal16):
    forms = hodge.standard_basis(conformal16)
    T = np.array([[1, 1, 0], [0, 1, 0], [0, 2, 1]])
    new = [hodge.combine(forms, T[:, j]) for j in range(3)]
    q = hodge.gram_matrix(forms, conformal16).matrix
    assert np.allclose(hodge.gram_matrix(new, conformal16).matrix, T.T @ q @ T, rtol=1e-12, atol=1e-12)


def test_rejects_non_integer_class():
    with pytest.raises(ValueError):
        hodge.CohomologyClass((0.5, 0, 0))
