"""Discrete harmonic representatives of integral cohomology classes on T^3.

The L2 inner product on edge cochains uses an octant quadrature: at every
vertex and for each of the eight incident cells, the three edges of that cell
meeting the vertex give a coefficient vector ``e/h`` which is weighted by
``sqrt(det G) G^{-1}`` (1-forms) or ``G / sqrt(det G)`` (2-forms, components
ordered ``(23, 31, 12)``). Harmonic representatives minimise this energy in
their class ``omega_nu + d(phi)``.
"""
from __future__ import annotations

import itertools
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ShapeError, SolverError
from .mesh import MetricField, PeriodicGrid

DEFAULT_TOL = 1e-10
OCTANTS = np.array(list(itertools.product((0, 1), repeat=3)))

_OPERATOR_CACHE: "weakref.WeakKeyDictionary[MetricField, HodgeOperators]" = weakref.WeakKeyDictionary()


def _grid_indices(grid: PeriodicGrid):
    n = np.arange(grid.N)
    return np.meshgrid(n, n, n, indexing="ij")


def exterior_derivative_0(grid: PeriodicGrid) -> sp.csr_matrix:
    """Vertices -> edges."""
    i, j, k = _grid_indices(grid)
    idx = [i, j, k]
    rows, cols, vals = [], [], []
    for a in range(3):
        fwd = list(idx)
        fwd[a] = idx[a] + 1
        r = grid.edge_index(a, i, j, k).ravel()
        rows += [r, r]
        cols += [grid.vertex_index(*fwd).ravel(), grid.vertex_index(i, j, k).ravel()]
        vals += [np.ones(r.size), -np.ones(r.size)]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.n_edges, grid.n_vertices))


def exterior_derivative_1(grid: PeriodicGrid) -> sp.csr_matrix:
    """Edges -> faces (circulation around each oriented face)."""
    i, j, k = _grid_indices(grid)
    idx = [i, j, k]

    def plus(axis):
        out = list(idx)
        out[axis] = idx[axis] + 1
        return out

    rows, cols, vals = [], [], []
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        r = grid.face_index(a, i, j, k).ravel()
        for axis, base, sgn in ((b, idx, 1.0), (c, plus(b), 1.0), (b, plus(c), -1.0), (c, idx, -1.0)):
            rows.append(r)
            cols.append(grid.edge_index(axis, *base).ravel())
            vals.append(np.full(r.size, sgn))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.n_faces, grid.n_edges))


def _octant_mass(grid: PeriodicGrid, weights: np.ndarray, scale: float, degree: int) -> sp.csr_matrix:
    i, j, k = _grid_indices(grid)
    rows, cols, vals = [], [], []
    for s in OCTANTS:
        comp = []
        for p in range(3):
            base = [i - s[0], j - s[1], k - s[2]]
            if degree == 1:
                # edge along p leaving the cell corner: only the p-th offset applies
                base = [i, j, k]
                base[p] = base[p] - s[p]
            else:
                # face normal to p through the vertex: offsets along the other two axes
                base[p] = [i, j, k][p]
            comp.append(grid.edge_index(p, *base).ravel().astype(np.int64))
        for p in range(3):
            for q in range(3):
                rows.append(comp[p])
                cols.append(comp[q])
                vals.append(scale * weights[..., p, q].ravel())
    n = 3 * grid.N ** 3
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return m.tocsr()


@dataclass(frozen=True, eq=False)
class HodgeOperators:
    field: MetricField
    d0: sp.csr_matrix
    d1: sp.csr_matrix
    mass1: sp.csr_matrix
    mass2: sp.csr_matrix
    laplacian0: sp.csr_matrix


def operators(field: MetricField) -> HodgeOperators:
    ops = _OPERATOR_CACHE.get(field)
    if ops is None:
        grid, h = field.grid, field.h
        d0 = exterior_derivative_0(grid)
        d1 = exterior_derivative_1(grid)
        w1 = field.sqrt_det[..., None, None] * field.inverse
        w2 = field.values / field.sqrt_det[..., None, None]
        mass1 = _octant_mass(grid, w1, h / 8.0, degree=1)
        mass2 = _octant_mass(grid, w2, 1.0 / (8.0 * h), degree=2)
        lap0 = (d0.T @ mass1 @ d0).tocsr()
        ops = HodgeOperators(field, d0, d1, mass1, mass2, lap0)
        _OPERATOR_CACHE[field] = ops
    return ops


def conjugate_gradient(A, b: np.ndarray, diag: np.ndarray, tol: float, max_iter: int):
    """Jacobi-preconditioned CG; returns the solution and the relative residual."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    M = LinearOperator(A.shape, matvec=lambda x: inv_diag * x, dtype=float)
    x, info = cg(A, b, rtol=tol, atol=0.0, maxiter=max_iter, M=M)
    res = float(np.linalg.norm(b - A @ x) / bnorm)
    if info != 0 and res > tol * 10:
        raise SolverError(f"conjugate gradients stopped after {max_iter} iterations "
                          f"with relative residual {res:.3e}", residual=res)
    return x, res


# --------------------------------------------------------------------------
# one-forms


@dataclass(frozen=True)
class CohomologyClass:
    periods: tuple[int, int, int]

    def __post_init__(self):
        vals = tuple(int(p) for p in self.periods)
        if len(vals) != 3 or any(v != p for v, p in zip(vals, self.periods)):
            raise ValueError(f"cohomology periods must be three integers, got {self.periods!r}")
        object.__setattr__(self, "periods", vals)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.periods, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class HarmonicOneForm:
    cochain: np.ndarray  # (3, N, N, N) edge values
    cls: CohomologyClass
    potential: np.ndarray  # phi with mean zero
    residual: float

    @property
    def periods(self) -> tuple[int, int, int]:
        return self.cls.periods

    def scaled(self, c: int) -> "HarmonicOneForm":
        return HarmonicOneForm(c * self.cochain, CohomologyClass(tuple(c * p for p in self.periods)),
                               c * self.potential, self.residual)


def reference_form(nu, grid: PeriodicGrid) -> np.ndarray:
    """Constant-coefficient cochain with integer periods ``nu``."""
    nu = np.asarray(nu, dtype=float)
    return np.broadcast_to(nu[:, None, None, None] * grid.h, (3,) + grid.shape).copy()


def discrete_periods(cochain: np.ndarray) -> np.ndarray:
    """Sum of the cochain around the three axis loops through the origin."""
    return np.array([cochain[0][:, 0, 0].sum(), cochain[1][0, :, 0].sum(), cochain[2][0, 0, :].sum()])


def codifferential_residual(cochain: np.ndarray, field: MetricField) -> float:
    """Relative size of the weak codifferential ``d0^T M1 a``."""
    ops = operators(field)
    flux = ops.mass1 @ cochain.ravel()
    div = ops.d0.T @ flux
    scale = abs(ops.d0.T) @ np.abs(flux)
    denom = np.linalg.norm(scale)
    return 0.0 if denom == 0.0 else float(np.linalg.norm(div) / denom)


def harmonic_representative(nu, field: MetricField, tol: float = DEFAULT_TOL,
                            max_iter: int | None = None) -> HarmonicOneForm:
    cls = nu if isinstance(nu, CohomologyClass) else CohomologyClass(tuple(nu))
    grid = field.grid
    if max_iter is None:
        max_iter = 50 * grid.N ** 3
    omega = reference_form(cls.vector, grid)
    ops = operators(field)
    rhs = -(ops.d0.T @ (ops.mass1 @ omega.ravel()))
    rhs -= rhs.mean()
    phi, _ = conjugate_gradient(ops.laplacian0, rhs, ops.laplacian0.diagonal(), tol, max_iter)
    phi -= phi.mean()
    cochain = omega + (ops.d0 @ phi).reshape(omega.shape)
    res = codifferential_residual(cochain, field)
    return HarmonicOneForm(cochain, cls, phi.reshape(grid.shape), res)


def combine(forms, coefficients) -> HarmonicOneForm:
    """Integer linear combination of harmonic forms (harmonic by linearity)."""
    coefficients = [int(c) for c in coefficients]
    cochain = sum(c * f.cochain for c, f in zip(coefficients, forms))
    pot = sum(c * f.potential for c, f in zip(coefficients, forms))
    periods = sum(c * f.cls.vector for c, f in zip(coefficients, forms))
    res = max(f.residual for f in forms)
    return HarmonicOneForm(np.asarray(cochain, dtype=float), CohomologyClass(tuple(periods)),
                           np.asarray(pot, dtype=float), res)


def standard_basis(field: MetricField, tol: float = DEFAULT_TOL, max_iter: int | None = None):
    return [harmonic_representative(e, field, tol, max_iter) for e in np.eye(3, dtype=int)]


def energy_inner(a: np.ndarray, b: np.ndarray, field: MetricField) -> float:
    return float(a.ravel() @ (operators(field).mass1 @ b.ravel()))


def l2_energy_norm(cochain: np.ndarray, field: MetricField) -> float:
    return float(np.sqrt(max(energy_inner(cochain, cochain, field), 0.0)))


@dataclass(frozen=True, eq=False)
class CohomologyGram:
    matrix: np.ndarray
    degree: int
    basis_periods: np.ndarray  # columns: integer periods of the H^1 basis used

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))


def _period_matrix(forms) -> np.ndarray:
    return np.array([f.cls.vector for f in forms], dtype=np.int64).T


def gram_matrix(forms, field: MetricField) -> CohomologyGram:
    forms = list(forms)
    if len(forms) != 3:
        raise ShapeError(f"need three one-forms, got {len(forms)}")
    shape = (3,) + field.grid.shape
    for f in forms:
        if f.cochain.shape != shape:
            raise ShapeError(f"one-form has shape {f.cochain.shape}, field expects {shape}")
    mass1 = operators(field).mass1
    A = np.stack([f.cochain.ravel() for f in forms], axis=1)
    Q = A.T @ (mass1 @ A)
    Q = 0.5 * (Q + Q.T)
    return CohomologyGram(Q, 1, _period_matrix(forms))


# --------------------------------------------------------------------------
# two-forms


_DUAL_CACHE: "weakref.WeakKeyDictionary[MetricField, np.ndarray]" = weakref.WeakKeyDictionary()


def reference_two_form(beta, grid: PeriodicGrid) -> np.ndarray:
    """Constant face cochain with flux ``beta[a]`` through the coordinate 2-torus normal to axis a."""
    beta = np.asarray(beta, dtype=float)
    return np.broadcast_to(beta[:, None, None, None] * grid.h ** 2, (3,) + grid.shape).copy()


def harmonic_two_form(beta, field: MetricField, tol: float = DEFAULT_TOL, max_iter: int | None = None):
    """Energy-minimising face cochain ``c_beta + d(psi)``; returns (cochain, relative residual)."""
    grid = field.grid
    if max_iter is None:
        max_iter = 50 * grid.N ** 3
    ops = operators(field)
    c = reference_two_form(beta, grid).ravel()
    d1, m2, d0 = ops.d1, ops.mass2, ops.d0
    # curl-curl is singular on gradients; a grad-div term fixes the gauge
    diag_cc = (d1.multiply(d1)).T @ m2.diagonal()
    gauge = float(np.mean(diag_cc)) / 2.0
    d0t = d0.T.tocsr()

    def matvec(x):
        return d1.T @ (m2 @ (d1 @ x)) + gauge * (d0 @ (d0t @ x))

    A = LinearOperator((grid.n_edges, grid.n_edges), matvec=matvec, dtype=float)
    rhs = -(d1.T @ (m2 @ c))
    psi, res = conjugate_gradient(A, rhs, diag_cc + 2.0 * gauge, tol, max_iter)
    return (c + d1 @ psi).reshape((3,) + grid.shape), res


def standard_dual_gram(field: MetricField, tol: float = DEFAULT_TOL, max_iter: int | None = None) -> np.ndarray:
    """H^2 Gram matrix in the basis dual to ``d theta^i`` under the wedge pairing."""
    Q = _DUAL_CACHE.get(field)
    if Q is None:
        m2 = operators(field).mass2
        forms = [harmonic_two_form(e, field, tol, max_iter)[0].ravel() for e in np.eye(3)]
        B = np.stack(forms, axis=1)
        Q = B.T @ (m2 @ B)
        Q = 0.5 * (Q + Q.T)
        _DUAL_CACHE[field] = Q
    return Q


def dual_gram(forms, field: MetricField, tol: float = DEFAULT_TOL, max_iter: int | None = None) -> CohomologyGram:
    """Gram matrix of the integral H^2 basis dual to the given H^1 basis."""
    forms = list(forms)
    if len(forms) != 3:
        raise ShapeError(f"need three one-forms, got {len(forms)}")
    P = _period_matrix(forms).astype(float)
    C = np.linalg.inv(P).T  # columns: flux vectors of the dual classes
    Q = C.T @ standard_dual_gram(field, tol, max_iter) @ C
    return CohomologyGram(0.5 * (Q + Q.T), 2, _period_matrix(forms))
