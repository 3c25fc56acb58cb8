import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toruslab import lattice
from toruslab.errors import CapacityError, ParameterError


def random_gram(rng):
    A = np.eye(3) + 0.6 * rng.standard_normal((3, 3))
    while abs(np.linalg.det(A)) < 0.2:
        A = np.eye(3) + 0.6 * rng.standard_normal((3, 3))
    scale = np.diag(np.exp(rng.uniform(-1, 1, 3)))
    Q = A.T @ scale @ A
    return 0.5 * (Q + Q.T)


def box_vectors(Q, radius):
    """Every nonzero integer vector in a box guaranteed to contain the ball of the given radius."""
    reach = np.floor(radius * np.sqrt(np.diag(np.linalg.inv(Q))) + 1e-9).astype(int)
    ranges = [range(-r, r + 1) for r in reach]
    V = np.array([v for v in itertools.product(*ranges) if any(v)], dtype=np.int64)
    n2 = np.einsum("ij,jk,ik->i", V, Q, V)
    return V[np.argsort(n2, kind="stable")], np.sort(n2)


def brute_minima(Q):
    radius = math.sqrt(np.max(np.diag(Q)))  # the unit vectors are independent, so lambda_3 <= this
    V, n2 = box_vectors(Q, radius)
    chosen = []
    for v, s in zip(V, n2):
        if np.linalg.matrix_rank(np.array(chosen + [v], dtype=float)) == len(chosen) + 1:
            chosen.append(v)
            if len(chosen) == 3:
                break
    return np.sqrt(np.einsum("ij,jk,ik->i", np.array(chosen), Q, np.array(chosen)))


def brute_basis_norms(Q, a1, a2):
    """Norms of the shortest completions: b1 = a1, b2 primitive in span(a1, a2), b3 unimodular."""
    radius = 2 * math.sqrt(np.max(np.diag(Q))) + np.sqrt(np.einsum("i,ij,j", a1, Q, a1))
    V, n2 = box_vectors(Q, radius)
    normal = np.cross(a1, a2)
    normal //= np.gcd.reduce(np.abs(normal))
    b2 = next(v for v in V if v @ normal == 0 and np.gcd.reduce(np.abs(np.cross(a1, v))) == 1)
    b3 = next(v for v in V if abs(round(np.linalg.det(np.array([a1, b2, v], dtype=float)))) == 1)
    return np.sqrt([np.einsum("i,ij,j", b, Q, b) for b in (a1, b2, b3)])


def test_identity():
    lam, vecs = lattice.successive_minima(np.eye(3))
    assert np.allclose(lam, 1.0)
    assert np.array_equal(vecs, np.eye(3, dtype=int))
    rb = lattice.reduced_basis(np.eye(3))
    assert rb.unimodular


def test_diagonal_example():
    Q = np.diag([6.0, 1.5, 2.0 / 3.0])
    rb = lattice.reduced_basis(Q)
    assert np.allclose(rb.minima, [math.sqrt(2 / 3), math.sqrt(1.5), math.sqrt(6)], rtol=1e-12)
    assert np.array_equal(rb.B, [[0, 0, 1], [0, 1, 0], [1, 0, 0]])


def test_random_grams_match_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        Q = random_gram(rng)
        rb = lattice.reduced_basis(Q)
        assert np.allclose(rb.minima, brute_minima(Q), rtol=1e-10)
        assert np.allclose(rb.norms, brute_basis_norms(Q, rb.minima_vectors[0], rb.minima_vectors[1]),
                           rtol=1e-10)
        assert rb.unimodular
        assert rb.norms[0] == pytest.approx(rb.minima[0], rel=1e-12)
        for j in (2, 3):
            assert rb.norms[j - 1] <= 0.5 * j * rb.minima[j - 1] * (1 + 1e-12)
        assert np.prod(rb.minima) <= lattice.minkowski_constant(3) * math.sqrt(np.linalg.det(Q))


def test_ill_conditioned_diagonal():
    lam, _ = lattice.successive_minima(np.diag([1e-4, 1.0, 1e4]))
    assert np.allclose(lam, [1e-2, 1.0, 1e2])


def test_enumerate_ball_matches_box():
    Q = np.array([[2.0, 0.7, 0.1], [0.7, 1.0, -0.3], [0.1, -0.3, 1.5]])
    got = lattice.enumerate_ball(Q, 2.5)
    V, n2 = box_vectors(Q, 2.5)
    expect = {tuple(v) for v, s in zip(V, n2) if s <= 6.25}
    assert {tuple(v) for v in got} == expect


def test_sort_vectors_canonical_order():
    V = lattice.sort_vectors(np.eye(3), lattice.enumerate_ball(np.eye(3), 1.5))
    assert [tuple(v) for v in V[:3]] == [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    assert len(V) == 9  # 3 unit vectors and 6 face diagonals, one per +- pair


def test_capacity_error():
    with pytest.raises(CapacityError):
        lattice.enumerate_ball(np.eye(3), 1e4)


def test_invalid_gram():
    with pytest.raises(ParameterError):
        lattice.successive_minima(np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ParameterError):
        lattice.successive_minima(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_dual_checks_on_flat_pair():
    G = np.diag([1.0, 4.0, 9.0])
    sd = math.sqrt(np.linalg.det(G))
    checks = lattice.minkowski_and_dual_checks(sd * np.linalg.inv(G), G / sd, sigma=1.0, volume=sd)
    assert checks.det_product == pytest.approx(1.0, rel=1e-12)
    assert all(v.passed for v in checks.verdicts)


def test_systole_bound_unit_torus():
    assert lattice.systole_bound(np.eye(3), 1.0) == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_unimodular_invariance(seed):
    # minima are a property of the lattice, not of the chosen basis
    rng = np.random.default_rng(seed)
    Q = random_gram(rng)
    U = np.eye(3, dtype=int)
    for _ in range(3):
        i, j = rng.choice(3, 2, replace=False)
        U[:, i] += int(rng.integers(-2, 3)) * U[:, j]
    lam0, _ = lattice.successive_minima(Q)
    lam1, _ = lattice.successive_minima(U.T @ Q @ U)
    assert np.allclose(lam0, lam1, rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_lll_is_unimodular(seed):
    Q = random_gram(np.random.default_rng(seed))
    T = lattice.lll_reduce(Q)
    assert abs(round(np.linalg.det(T.astype(float)))) == 1
