"""Degree-one harmonic torus maps built from a reduced cohomology basis.

The map ``U = (u^1, u^2, u^3)`` is represented by its differential: three
harmonic one-forms ``a^j = du^j`` whose integer periods are the columns of the
reduced basis matrix.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import hodge
from .errors import DegeneracyError, ParameterError
from .hodge import HarmonicOneForm
from .lattice import ReducedBasis, reduced_basis
from .mesh import (MetricField, christoffel, christoffel_and_hessian, corner_mean, form_norm, integrate,
                   lp_norm, scalar_curvature, total_volume, vertex_coefficients)
from .report import Verdict


def degree_tolerance(N: int) -> float:
    return 50.0 / N ** 2


@dataclass(frozen=True, eq=False)
class HarmonicTorusMap:
    forms: tuple  # three HarmonicOneForms, the components du^j
    basis_transform: np.ndarray  # integer matrix, column j = periods of du^j
    orientation: int  # -1 when the first component was negated
    degree: float
    gram: np.ndarray  # H^1 Gram in the standard basis
    reduced: ReducedBasis

    def coefficients(self, h: float) -> np.ndarray:
        """Vertex coefficients, shape (3, N, N, N, 3): ``[j, ..., i]`` is the i-th coordinate of du^j."""
        return np.stack([vertex_coefficients(f.cochain, h) for f in self.forms])


def degree(forms, field: MetricField) -> float:
    """Coordinate-measure integral of ``a^1 ^ a^2 ^ a^3``."""
    forms = forms.forms if isinstance(forms, HarmonicTorusMap) else forms
    h = field.h
    a = [vertex_coefficients(f.cochain, h) for f in forms]
    triple = np.einsum("...i,...i->...", a[0], np.cross(a[1], a[2]))
    return float(np.sum(corner_mean(triple)) * h ** 3)


def _solve_standard(field: MetricField, tol: float, workers: int):
    if workers <= 1:
        return hodge.standard_basis(field, tol)
    hodge.operators(field)  # build once before fanning out
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda e: hodge.harmonic_representative(e, field, tol), np.eye(3, dtype=int)))


def build_map(field: MetricField, tol: float = hodge.DEFAULT_TOL, workers: int = 1) -> HarmonicTorusMap:
    standard = _solve_standard(field, tol, workers)
    gram = hodge.gram_matrix(standard, field).matrix
    rb = reduced_basis(gram)
    B = rb.B.copy()
    forms = [hodge.combine(standard, B[:, j]) for j in range(3)]
    deg = degree(forms, field)
    sign = 1
    if deg < 0:
        sign = -1
        forms[0] = forms[0].scaled(-1)
        B[:, 0] = -B[:, 0]
        deg = -deg
    if abs(deg - 1.0) > degree_tolerance(field.N):
        raise DegeneracyError(f"discrete degree {deg:.6g} outside 1 +- {degree_tolerance(field.N):.3g}", deg)
    return HarmonicTorusMap(tuple(forms), B, sign, deg, gram, rb)


def component_norms(forms, field: MetricField, p: float) -> np.ndarray:
    forms = forms.forms if isinstance(forms, HarmonicTorusMap) else forms
    return np.array([lp_norm(form_norm(vertex_coefficients(f.cochain, field.h), field), p, field)
                     for f in forms])


@dataclass(frozen=True)
class SternReport:
    l2: tuple
    l3: tuple
    deficit: tuple
    rhs: tuple
    slack: tuple
    rneg_l2: float
    disc_slack: float

    @property
    def holds(self) -> bool:
        return all(s >= 0 for s in self.slack)


def stern_deficit(form: HarmonicOneForm, field: MetricField, gamma: np.ndarray | None = None) -> float:
    """``int |nabla a|^2 / (|a| + eps_reg) dV`` with ``eps_reg = 1e-8 * mean |a|``."""
    _, hnorm = christoffel_and_hessian(field, form.cochain, gamma)
    mag = form_norm(vertex_coefficients(form.cochain, field.h), field)
    eps_reg = 1e-8 * float(np.mean(mag))
    if eps_reg == 0.0:
        return 0.0
    return integrate(hnorm ** 2 / (mag + eps_reg), field)


def negative_curvature_l2(field: MetricField) -> float:
    return lp_norm(scalar_curvature(field).negative_part, 2, field)


def stern_report(hmap: HarmonicTorusMap, field: MetricField, disc_slack: float = 0.0) -> SternReport:
    gamma = christoffel(field)
    rneg = negative_curvature_l2(field)
    l2 = component_norms(hmap, field, 2)
    l3 = component_norms(hmap, field, 3)
    deficit = np.array([stern_deficit(f, field, gamma) for f in hmap.forms])
    rhs = rneg * l2
    slack = rhs + disc_slack - deficit
    return SternReport(tuple(l2), tuple(l3), tuple(deficit), tuple(rhs), tuple(slack), rneg, disc_slack)


def l3_bound(du_l2: float, du_l3: float, rneg_l2: float, sigma: float, eta: float, kappa: float,
             volume: float) -> float:
    """Right-hand side of the L^2-to-L^3 estimate for a harmonic circle-valued map."""
    if sigma <= 0 or eta <= 0:
        raise ParameterError(f"sigma and eta must be positive, got sigma={sigma}, eta={eta}")
    if volume <= 0:
        raise ParameterError(f"volume must be positive, got {volume}")
    osc = 1.0 + kappa / sigma * np.sqrt(volume) * du_l2
    first = (osc / eta * kappa * du_l2 ** 2) ** (2.0 / 3.0)
    second = (osc * kappa * du_l3 ** 1.5 * np.sqrt(rneg_l2)) ** (2.0 / 3.0)
    return float(1.0 + first + second)


def l3_inequality_check(hmap: HarmonicTorusMap, field: MetricField, sigma: float, eta: float, kappa: float,
                        volume: float | None = None, rneg_l2: float | None = None) -> list[Verdict]:
    if sigma <= 0 or eta <= 0:
        raise ParameterError(f"sigma and eta must be positive, got sigma={sigma}, eta={eta}")
    if volume is None:
        volume = total_volume(field)
    if rneg_l2 is None:
        rneg_l2 = negative_curvature_l2(field)
    l2 = component_norms(hmap, field, 2)
    l3 = component_norms(hmap, field, 3)
    return [Verdict.le(f"L2_to_L3[u{j + 1}]", l3[j], l3_bound(l2[j], l3[j], rneg_l2, sigma, eta, kappa, volume))
            for j in range(3)]
