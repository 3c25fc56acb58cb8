"""Periodic cubical grid on the 3-torus carrying a vertex-sampled metric.

Conventions used throughout the package:

* vertex ``(i, j, k)`` sits at coordinates ``(i, j, k) * h`` with ``h = 1/N``;
* edge ``(a, i, j, k)`` runs from vertex ``(i, j, k)`` to ``(i, j, k) + e_a``;
* face ``(a, i, j, k)`` is normal to axis ``a``, based at ``(i, j, k)`` and
  oriented as ``e_b ^ e_c`` with ``(a, b, c)`` cyclic;
* cell ``(i, j, k)`` is the cube ``[i, i+1] x [j, j+1] x [k, k+1]`` (times h).

Cochains are stored as arrays of shape ``(3, N, N, N)`` (edges, faces) or
``(N, N, N)`` (vertices, cells). Cell regions are boolean ``(N, N, N)`` masks.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .errors import MetricError, ParameterError, ResolutionError, ShapeError

EIG_FLOOR = 1e-6
CORNERS = np.array(list(itertools.product((0, 1), repeat=3)))


@dataclass(frozen=True)
class PeriodicGrid:
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 4:
            raise ResolutionError(f"grid resolution must be an integer >= 4, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.N, self.N, self.N)

    @property
    def n_vertices(self) -> int:
        return self.N ** 3

    @property
    def n_edges(self) -> int:
        return 3 * self.N ** 3

    @property
    def n_faces(self) -> int:
        return 3 * self.N ** 3

    @property
    def n_cells(self) -> int:
        return self.N ** 3

    def vertex_index(self, i, j, k):
        N = self.N
        return (np.mod(i, N) * N + np.mod(j, N)) * N + np.mod(k, N)

    cell_index = vertex_index

    def edge_index(self, axis, i, j, k):
        return axis * self.N ** 3 + self.vertex_index(i, j, k)

    face_index = edge_index

    def coordinates(self) -> np.ndarray:
        """Vertex coordinates, shape (N, N, N, 3)."""
        x = np.arange(self.N) * self.h
        return np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)

    def cell_centers(self) -> np.ndarray:
        return self.coordinates() + 0.5 * self.h


def build_grid(N: int) -> PeriodicGrid:
    return PeriodicGrid(N)


# --------------------------------------------------------------------------
# metric specifications (trigonometric polynomials and constants)


def _as_matrix(values) -> np.ndarray:
    m = np.asarray(values, dtype=float)
    if m.size != 9:
        raise MetricError(f"metric matrix needs 9 entries, got {m.size}")
    return m.reshape(3, 3)


@dataclass(frozen=True)
class FourierTerm:
    amplitude: float
    wave: tuple[int, int, int]
    phase: float = 0.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        k = np.asarray(self.wave, dtype=float)
        return self.amplitude * np.cos(2 * np.pi * (x @ k) + self.phase)

    def scaled(self, c: float) -> "FourierTerm":
        return FourierTerm(self.amplitude * c, self.wave, self.phase)

    @classmethod
    def from_dict(cls, d: dict) -> "FourierTerm":
        wave = tuple(int(w) for w in d["wave"])
        if len(wave) != 3 or any(w != float(x) for w, x in zip(wave, d["wave"])):
            raise MetricError(f"wave vector must be 3 integers, got {d['wave']!r}")
        return cls(float(d["amplitude"]), wave, float(d.get("phase", 0.0)))

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "wave": list(self.wave), "phase": self.phase}


def _fourier_sum(terms: Sequence[FourierTerm], x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape[:-1])
    for t in terms:
        out = out + t(x)
    return out


@dataclass(frozen=True)
class ConstantMetric:
    matrix: tuple

    kind = "constant"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        m = _as_matrix(self.matrix)
        return np.broadcast_to(m, x.shape[:-1] + (3, 3)).copy()

    def scaled(self, eps: float) -> "ConstantMetric":
        return self

    def to_dict(self) -> dict:
        return {"kind": self.kind, "matrix": list(np.ravel(self.matrix))}


@dataclass(frozen=True)
class ConformalMetric:
    """``G(x) = exp(2 f(x)) * base`` with ``f`` a finite Fourier sum."""

    base: tuple
    terms: tuple = ()

    kind = "conformal"

    def log_factor(self, x: np.ndarray) -> np.ndarray:
        return _fourier_sum(self.terms, x)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        f = self.log_factor(x)
        return np.exp(2 * f)[..., None, None] * _as_matrix(self.base)

    def scaled(self, eps: float) -> "ConformalMetric":
        return ConformalMetric(self.base, tuple(t.scaled(eps) for t in self.terms))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "base": list(np.ravel(self.base)),
                "fourier": [t.to_dict() for t in self.terms]}


@dataclass(frozen=True)
class DirectFourierMetric:
    """``G_ij(x) = base_ij + sum of Fourier terms`` given per upper-triangle entry."""

    base: tuple
    components: tuple = ()  # ((i, j, (terms...)), ...)

    kind = "direct_fourier"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        G = np.broadcast_to(_as_matrix(self.base), x.shape[:-1] + (3, 3)).copy()
        for i, j, terms in self.components:
            s = _fourier_sum(terms, x)
            G[..., i, j] += s
            if i != j:
                G[..., j, i] += s
        return G

    def scaled(self, eps: float) -> "DirectFourierMetric":
        comps = tuple((i, j, tuple(t.scaled(eps) for t in terms)) for i, j, terms in self.components)
        return DirectFourierMetric(self.base, comps)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "base": list(np.ravel(self.base)),
                "components": [{"index": [i, j], "fourier": [t.to_dict() for t in terms]}
                               for i, j, terms in self.components]}


def metric_from_spec(spec: dict):
    """Parse the JSON metric description used by the command line."""
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantMetric(tuple(_as_matrix(spec["matrix"]).ravel()))
    if kind == "conformal":
        base = spec.get("base", np.eye(3).ravel())
        terms = tuple(FourierTerm.from_dict(t) for t in spec.get("fourier", []))
        return ConformalMetric(tuple(_as_matrix(base).ravel()), terms)
    if kind == "direct_fourier":
        base = spec.get("base", np.eye(3).ravel())
        comps = []
        for c in spec.get("components", []):
            i, j = (int(v) for v in c["index"])
            if not (0 <= i <= 2 and 0 <= j <= 2):
                raise MetricError(f"component index out of range: {c['index']!r}")
            i, j = min(i, j), max(i, j)
            comps.append((i, j, tuple(FourierTerm.from_dict(t) for t in c.get("fourier", []))))
        return DirectFourierMetric(tuple(_as_matrix(base).ravel()), tuple(comps))
    raise MetricError(f"unknown metric kind {kind!r}")


# --------------------------------------------------------------------------
# sampled metric field


@dataclass(frozen=True, eq=False)
class MetricField:
    grid: PeriodicGrid
    values: np.ndarray
    eig_floor: float = EIG_FLOOR
    inverse: np.ndarray = dc_field(init=False, repr=False)
    sqrt_det: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self):
        G = np.asarray(self.values, dtype=float)
        if G.shape != self.grid.shape + (3, 3):
            raise ShapeError(f"metric values have shape {G.shape}, expected {self.grid.shape + (3, 3)}")
        asym = np.max(np.abs(G - np.swapaxes(G, -1, -2)))
        if asym > 1e-12 * max(1.0, np.max(np.abs(G))):
            raise MetricError(f"metric is not symmetric (max asymmetry {asym:.3e})")
        G = 0.5 * (G + np.swapaxes(G, -1, -2))
        lam_min = float(np.min(np.linalg.eigvalsh(G)))
        if lam_min < self.eig_floor:
            raise MetricError(f"metric is not positive definite: smallest eigenvalue {lam_min:.3e}")
        G.setflags(write=False)
        object.__setattr__(self, "values", G)
        inv = np.linalg.inv(G)
        inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
        inv.setflags(write=False)
        object.__setattr__(self, "inverse", inv)
        sd = np.sqrt(np.linalg.det(G))
        sd.setflags(write=False)
        object.__setattr__(self, "sqrt_det", sd)

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def h(self) -> float:
        return self.grid.h

    def is_constant(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.values - self.values[0, 0, 0])) <= tol)


def sample_metric(spec, grid: PeriodicGrid | int, eig_floor: float = EIG_FLOOR) -> MetricField:
    if isinstance(grid, int):
        grid = build_grid(grid)
    if isinstance(spec, dict):
        spec = metric_from_spec(spec)
    return MetricField(grid, spec(grid.coordinates()), eig_floor)


def constant_field(matrix, N: int) -> MetricField:
    return sample_metric(ConstantMetric(tuple(_as_matrix(matrix).ravel())), N)


def permute_axes(field: MetricField, perm: Sequence[int]) -> MetricField:
    """Relabel coordinate axes jointly in the grid and the metric."""
    perm = list(perm)
    G = np.transpose(field.values, perm + [3, 4])
    G = G[..., perm, :][..., :, perm]
    return MetricField(field.grid, G, field.eig_floor)


# --------------------------------------------------------------------------
# quadrature


def shift(f: np.ndarray, offset, axes=(0, 1, 2)) -> np.ndarray:
    """Periodic read ``out[v] = f[v + offset]`` over the spatial axes."""
    return np.roll(f, tuple(-int(o) for o in offset), axis=axes)


def corner_mean(f: np.ndarray) -> np.ndarray:
    """Average of a vertex field over the eight corners of every cell."""
    out = np.zeros_like(f, dtype=float)
    for c in CORNERS:
        out += shift(f, c)
    return out / 8.0


def cell_metric(field: MetricField) -> np.ndarray:
    return corner_mean(field.values)


def cell_volumes(field: MetricField) -> np.ndarray:
    Gc = cell_metric(field)
    det = np.linalg.det(Gc)
    if np.min(det) <= 0:
        raise MetricError("cell-averaged metric lost positive definiteness")
    return np.sqrt(det) * field.h ** 3


def total_volume(field: MetricField) -> float:
    return float(np.sum(cell_volumes(field)))


def _region_mask(field: MetricField, region) -> np.ndarray:
    if region is None:
        return np.ones(field.grid.shape, dtype=bool)
    region = np.asarray(region, dtype=bool)
    if region.shape != field.grid.shape:
        raise ShapeError(f"region mask has shape {region.shape}, expected {field.grid.shape}")
    return region


def integrate(values: np.ndarray, field: MetricField, region=None) -> float:
    """Integral of a vertex-sampled scalar over a cell region w.r.t. dV_g."""
    mask = _region_mask(field, region)
    if not mask.any():
        return 0.0
    return float(np.sum((cell_volumes(field) * corner_mean(values))[mask]))


def lp_norm(values: np.ndarray, p: float, field: MetricField, region=None) -> float:
    """``(int_region |values|^p dV_g)^(1/p)``; ``p = inf`` gives the sup over region corners."""
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    values = np.abs(np.asarray(values, dtype=float))
    mask = _region_mask(field, region)
    if not mask.any():
        return 0.0
    if math.isinf(p):
        corners = np.zeros(field.grid.shape, dtype=bool)
        for c in CORNERS:
            corners |= shift(mask, -c)
        return float(np.max(values[corners]))
    return integrate(values ** p, field, mask) ** (1.0 / p)


# --------------------------------------------------------------------------
# forms sampled at vertices


def vertex_coefficients(cochain: np.ndarray, h: float) -> np.ndarray:
    """Average the two edges incident to each vertex along every axis.

    Returns the coordinate coefficients ``a_i(v)`` with shape (N, N, N, 3).
    """
    cochain = np.asarray(cochain, dtype=float)
    out = np.empty(cochain.shape[1:] + (3,))
    for a in range(3):
        back = [0, 0, 0]
        back[a] = -1
        out[..., a] = 0.5 * (cochain[a] + shift(cochain[a], back)) / h
    return out


def form_norm(coeffs: np.ndarray, field: MetricField) -> np.ndarray:
    """Pointwise ``|a|_g`` of a vertex-sampled one-form."""
    sq = np.einsum("...i,...ij,...j->...", coeffs, field.inverse, coeffs)
    return np.sqrt(np.maximum(sq, 0.0))


def central_diff(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * h)


def _gradient(f: np.ndarray, h: float) -> np.ndarray:
    """Stack of central differences; the new derivative index is appended last."""
    return np.stack([central_diff(f, a, h) for a in range(3)], axis=-1)


def christoffel(field: MetricField) -> np.ndarray:
    """``Gamma[..., m, i, j]`` from second-order central differences of G."""
    dG = _gradient(field.values, field.h)  # dG[..., i, j, k] = d_k G_ij
    lower = 0.5 * (np.einsum("...kji->...kij", dG) + dG - np.einsum("...ijk->...kij", dG))
    # lower[..., k, i, j] = 1/2 (d_i G_kj + d_j G_ki - d_k G_ij)
    return np.einsum("...mk,...kij->...mij", field.inverse, lower)


@dataclass(frozen=True, eq=False)
class ScalarCurvatureField:
    R: np.ndarray

    @property
    def negative_part(self) -> np.ndarray:
        return np.maximum(-self.R, 0.0)


def scalar_curvature(field: MetricField) -> ScalarCurvatureField:
    Gam = christoffel(field)
    dGam = _gradient(Gam, field.h)  # dGam[..., m, i, j, l] = d_l Gamma^m_ij
    ric = (np.einsum("...mijm->...ij", dGam)
           - np.einsum("...mimj->...ij", dGam)
           + np.einsum("...mmk,...kij->...ij", Gam, Gam)
           - np.einsum("...mjk,...kim->...ij", Gam, Gam))
    R = np.einsum("...ij,...ij->...", field.inverse, ric)
    return ScalarCurvatureField(R)


def christoffel_and_hessian(field: MetricField, cochain: np.ndarray, gamma: np.ndarray | None = None):
    """Covariant Hessian ``H_ij = d_i a_j - Gamma^k_ij a_k`` of a closed one-form and ``|H|_g``."""
    if gamma is None:
        gamma = christoffel(field)
    a = vertex_coefficients(cochain, field.h)
    da = _gradient(a, field.h)  # da[..., j, i] = d_i a_j
    H = np.swapaxes(da, -1, -2) - np.einsum("...kij,...k->...ij", gamma, a)
    Ginv = field.inverse
    sq = np.einsum("...ik,...jl,...ij,...kl->...", Ginv, Ginv, H, H)
    return H, np.sqrt(np.maximum(sq, 0.0))


def face_area_elements(field: MetricField) -> np.ndarray:
    """Induced area of every face, shape (3, N, N, N), indexed like face cochains."""
    G = field.values
    out = np.empty((3,) + field.grid.shape)
    h2 = field.h ** 2
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        Gf = np.zeros_like(G)
        for db in (0, 1):
            for dc in (0, 1):
                off = [0, 0, 0]
                off[b], off[c] = db, dc
                Gf = Gf + shift(G, off)
        Gf = Gf / 4.0
        cof = Gf[..., b, b] * Gf[..., c, c] - Gf[..., b, c] ** 2
        out[a] = np.sqrt(np.maximum(cof, 0.0)) * h2
    return out
