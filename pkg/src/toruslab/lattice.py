"""Successive minima, reduced bases and the systolic bounds they feed.

A lattice is handled through its Gram matrix ``Q``: the integer vector ``v``
has squared norm ``v^T Q v``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ParameterError
from .report import Verdict

MAX_CANDIDATES = 10 ** 7


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def minkowski_constant(n: int) -> float:
    """``2^n / |B(0,1)|``, the product-of-minima constant."""
    return 2.0 ** n / unit_ball_volume(n)


@dataclass(frozen=True, eq=False)
class LatticeGram:
    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
            raise ParameterError(f"Gram matrix must be square, got shape {Q.shape}")
        if np.max(np.abs(Q - Q.T)) > 1e-12 * max(1.0, np.max(np.abs(Q))):
            raise ParameterError("Gram matrix is not symmetric")
        Q = 0.5 * (Q + Q.T)
        if np.min(np.linalg.eigvalsh(Q)) <= 0:
            raise ParameterError("Gram matrix is not positive definite")
        object.__setattr__(self, "Q", Q)

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @property
    def covolume(self) -> float:
        return float(np.sqrt(np.linalg.det(self.Q)))

    def norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(max(v @ self.Q @ v, 0.0)))


def _as_gram(Q) -> LatticeGram:
    return Q if isinstance(Q, LatticeGram) else LatticeGram(Q)


def lll_reduce(Q: np.ndarray, delta: float = 0.99) -> np.ndarray:
    """Integer unimodular T whose columns form an LLL-reduced basis for Gram ``Q``."""
    n = Q.shape[0]
    T = np.eye(n, dtype=np.int64)

    def gso(T):
        G = T.T @ Q @ T
        mu = np.zeros((n, n))
        Bn = np.zeros(n)
        for i in range(n):
            for j in range(i):
                mu[i, j] = (G[i, j] - sum(mu[j, k] * mu[i, k] * Bn[k] for k in range(j))) / Bn[j]
            Bn[i] = G[i, i] - sum(mu[i, k] ** 2 * Bn[k] for k in range(i))
        return mu, Bn

    k = 1
    for _ in range(10000):
        if k >= n:
            break
        mu, Bn = gso(T)
        for j in range(k - 1, -1, -1):
            r = int(round(mu[k, j]))
            if r:
                T[:, k] -= r * T[:, j]
                mu, Bn = gso(T)
        if Bn[k] >= (delta - mu[k, k - 1] ** 2) * Bn[k - 1]:
            k += 1
        else:
            T[:, [k - 1, k]] = T[:, [k, k - 1]]
            k = max(k - 1, 1)
    return T


def enumerate_ball(Q, radius: float, max_candidates: int = MAX_CANDIDATES) -> np.ndarray:
    """All nonzero integer vectors with ``v^T Q v <= radius^2`` (Fincke-Pohst)."""
    Q = _as_gram(Q).Q
    n = Q.shape[0]
    est = unit_ball_volume(n) * radius ** n / math.sqrt(np.linalg.det(Q))
    if est > max_candidates:
        raise CapacityError(f"enumeration radius {radius:.4g} needs ~{est:.3g} candidates "
                            f"(limit {max_candidates})")
    R2 = radius ** 2 * (1 + 1e-12) + 1e-300
    U = np.linalg.cholesky(Q).T  # Q = U^T U, U upper triangular
    diag = np.diag(U)
    mu = U / diag[:, None]
    blocks = []
    x = np.zeros(n, dtype=np.int64)

    def bounds(i, remaining):
        c = -float(mu[i, i + 1:] @ x[i + 1:])
        span = math.sqrt(max(remaining, 0.0)) / diag[i]
        return c, math.ceil(c - span - 1e-12), math.floor(c + span + 1e-12)

    def rec(i, remaining):
        c, lo, hi = bounds(i, remaining)
        if lo > hi:
            return
        if i == 0:
            block = np.zeros((hi - lo + 1, n), dtype=np.int64)
            block[:, 0] = np.arange(lo, hi + 1)
            block[:, 1:] = x[1:]
            blocks.append(block)
            return
        for xi in range(lo, hi + 1):
            t = (xi - c) * diag[i]
            x[i] = xi
            rec(i - 1, remaining - t * t)
        x[i] = 0

    rec(n - 1, R2)
    if not blocks:
        return np.zeros((0, n), dtype=np.int64)
    V = np.concatenate(blocks)
    V = V[np.any(V != 0, axis=1)]
    norms2 = np.einsum("ij,jk,ik->i", V, Q, V)
    return V[norms2 <= R2]


def _canonical(v: np.ndarray) -> np.ndarray:
    """Flip each row so that its first nonzero coordinate is positive."""
    v = np.asarray(v)
    rows = np.atleast_2d(v)
    first = np.argmax(rows != 0, axis=1)
    sign = np.where(rows[np.arange(len(rows)), first] < 0, -1, 1)
    out = rows * sign[:, None]
    return out[0] if v.ndim == 1 else out


def sort_vectors(Q, V: np.ndarray) -> np.ndarray:
    """Sort by norm, ties broken lexicographically (largest leading coordinate first).

    Only one vector of every +-v pair is kept.
    """
    Q = _as_gram(Q).Q
    if len(V) == 0:
        return V
    V = np.unique(_canonical(V), axis=0)
    n2 = np.einsum("ij,jk,ik->i", V, Q, V)
    order = np.argsort(n2, kind="stable")
    V, n2 = V[order], n2[order]
    jumps = np.diff(n2) > 1e-12 * np.maximum(1.0, n2[1:])
    groups = np.concatenate([[0], np.cumsum(jumps)])
    keys = [-V[:, c] for c in range(V.shape[1] - 1, -1, -1)] + [groups]
    return V[np.lexsort(keys)]


def enumeration_radius(Q) -> float:
    """Longest vector of an LLL basis: n independent vectors lie inside, so lambda_n does too."""
    Q = _as_gram(Q).Q
    T = lll_reduce(Q)
    return float(np.sqrt(np.max(np.einsum("ij,ik,kj->j", T, Q, T))))


def _independent_of(chosen: list, V: np.ndarray) -> np.ndarray:
    """Mask of rows of V outside the span of the chosen vectors (rank <= 2 in dimension 3)."""
    if not chosen:
        return np.any(V != 0, axis=1)
    if len(chosen) == 1:
        return np.any(np.cross(chosen[0], V) != 0, axis=1)
    return V @ np.cross(chosen[0], chosen[1]) != 0


def greedy_minima(Q, V: np.ndarray):
    """First n independent rows of the sorted list V; these attain the successive minima."""
    Q = _as_gram(Q).Q
    n = Q.shape[0]
    chosen = []
    if n == 3:
        while len(chosen) < n:
            hits = np.flatnonzero(_independent_of(chosen, V))
            if hits.size == 0:
                break
            chosen.append(V[hits[0]])
    else:
        for v in V:
            if np.linalg.matrix_rank(np.array(chosen + [v], dtype=float)) == len(chosen) + 1:
                chosen.append(v)
                if len(chosen) == n:
                    break
    if len(chosen) < n:
        raise CapacityError("enumeration did not reach full rank; radius too small")
    vecs = np.array(chosen, dtype=np.int64)
    lam = np.sqrt(np.einsum("ij,jk,ik->i", vecs, Q, vecs))
    return lam, vecs


def successive_minima(Q, max_candidates: int = MAX_CANDIDATES):
    """Exact successive minima ``lambda_1 <= ... <= lambda_n`` and attaining vectors (rows)."""
    G = _as_gram(Q)
    V = sort_vectors(G, enumerate_ball(G, enumeration_radius(G), max_candidates))
    return greedy_minima(G, V)


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    B: np.ndarray  # integer matrix, columns b_j
    norms: np.ndarray
    minima: np.ndarray
    minima_vectors: np.ndarray

    @property
    def unimodular(self) -> bool:
        return abs(round(np.linalg.det(self.B.astype(float)))) == 1


def _primitive(v: np.ndarray) -> np.ndarray:
    g = int(np.gcd.reduce(np.abs(v)))
    return v // g if g else v


def complete_basis(Q, V: np.ndarray, minima_vectors: np.ndarray) -> np.ndarray:
    """Grow ``b_1 = a_1`` into a basis of Z^n by shortest coset representatives.

    At step j the new vector is the shortest ``v`` in the sorted list ``V`` such
    that ``b_1..b_{j-1}, v`` is a basis of ``Z^n`` intersected with the span of
    ``a_1..a_j``.
    """
    n = minima_vectors.shape[1]
    if n != 3:
        raise ParameterError("basis completion is implemented for rank 3")
    a1, a2 = minima_vectors[0], minima_vectors[1]
    b1 = _canonical(a1.copy())
    normal = _primitive(np.cross(a1, a2))
    cross = np.cross(b1, V)
    ok2 = np.all(np.abs(cross) == np.abs(normal), axis=1) & (np.abs(cross @ normal) == normal @ normal)
    if not ok2.any():
        raise CapacityError("no coset representative for the second basis vector in the enumeration")
    b2 = V[np.argmax(ok2)]
    ok3 = np.abs(V @ np.cross(b1, b2)) == 1
    if not ok3.any():
        raise CapacityError("no coset representative for the third basis vector in the enumeration")
    b3 = V[np.argmax(ok3)]
    return np.stack([b1, b2, b3], axis=1).astype(np.int64)


def reduced_basis(Q, max_candidates: int = MAX_CANDIDATES) -> ReducedBasis:
    G = _as_gram(Q)
    lam, vecs = successive_minima(G, max_candidates)
    # every shortest coset representative obeys |b_j| <= max(lambda_j, sum_{i<=j} lambda_i / 2)
    radius = max(lam[-1], 0.5 * float(np.sum(lam)))
    V = sort_vectors(G, enumerate_ball(G, radius, max_candidates))
    B = complete_basis(G, V, vecs)
    norms = np.sqrt(np.einsum("ji,jk,ki->i", B, G.Q, B))
    return ReducedBasis(B, norms, lam, vecs)


# --------------------------------------------------------------------------
# systolic and determinant bounds


def basis_norm_bound(j: int, n: int, sigma: float, volume: float) -> float:
    """Upper bound on the L2 norm of the j-th reduced harmonic basis form (1-based j)."""
    e = n + j - 1
    inner = 2.0 ** (2 * n) * unit_ball_volume(n) ** 2 * sigma ** (-e) * volume ** (0.5 * e)
    return j * inner ** (1.0 / (n - j + 1))


def systole_bound(Q, volume: float) -> float:
    """``|M|^{1/2} * lambda_1`` of the given cohomology lattice (an upper bound on a stable systole)."""
    if volume <= 0:
        raise ParameterError(f"volume must be positive, got {volume}")
    lam, _ = successive_minima(Q)
    return float(np.sqrt(volume) * lam[0])


@dataclass(frozen=True)
class LatticeChecks:
    minima_h1: tuple
    minima_h2: tuple
    det_product: float
    basis_norms: tuple
    verdicts: tuple


def minkowski_and_dual_checks(Q1, Q2, sigma: float, volume: float, det_tol: float = 5e-3,
                              basis: ReducedBasis | None = None) -> LatticeChecks:
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if volume <= 0:
        raise ParameterError(f"volume must be positive, got {volume}")
    G1, G2 = _as_gram(Q1), _as_gram(Q2)
    n = G1.dim
    ball = unit_ball_volume(n)
    lam1, _ = successive_minima(G1)
    lam2, _ = successive_minima(G2)
    if basis is None:
        basis = reduced_basis(G1)
    prod1, prod2 = float(np.prod(lam1)), float(np.prod(lam2))
    det_product = float(np.linalg.det(G1.Q) * np.linalg.det(G2.Q))
    verdicts = [
        Verdict.le("lat_minima_det_ineq[H1]", prod1, minkowski_constant(n) * G1.covolume),
        Verdict.le("lat_minima_det_ineq[H2]", prod2, minkowski_constant(n) * G2.covolume),
        Verdict.close("det_dual_lat", det_product, 1.0, det_tol),
        Verdict.le("prod_min_upper_bound", prod1,
                   2.0 ** (2 * n) * ball ** 2 * sigma ** (-n) * volume ** (n / 2)),
        Verdict.le("lambda1_upper_bound", lam1[0], 4 * ball ** (2 / n) / sigma * math.sqrt(volume)),
        Verdict.le("bounded_lat_basis[b1]", basis.norms[0], lam1[0], tol=1e-12),
    ]
    for j in range(2, n + 1):
        verdicts.append(Verdict.le(f"bounded_lat_basis[b{j}]", basis.norms[j - 1], 0.5 * j * lam1[j - 1],
                                   tol=1e-12))
    for j in range(1, n + 1):
        verdicts.append(Verdict.le(f"basis_norm_bound[a{j}]", basis.norms[j - 1],
                                   basis_norm_bound(j, n, sigma, volume)))
    return LatticeChecks(tuple(lam1), tuple(lam2), det_product, tuple(basis.norms), tuple(verdicts))
