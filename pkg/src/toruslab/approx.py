"""Constant-matrix approximation of ``g^{jk} = g(du^j, du^k)`` and the set Omega.

Vertex fields are extended to cells by the all-corners rule: a cell belongs
to a level set when all eight of its corners do.
"""
from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import label

from .cover import lift
from .errors import ExtractionError, ParameterError, RecoveryError
from .harmap import HarmonicTorusMap, component_norms, stern_deficit
from .mesh import (CORNERS, MetricField, cell_volumes, christoffel, corner_mean, face_area_elements, integrate,
                   lp_norm, shift, total_volume, vertex_coefficients)
from .report import Verdict

DET_FLOOR = 1e-6
N_THRESHOLDS = 16
# |d det(c)| <= ||adj c||_F ||dc||_F and ||adj c||_F <= ||c||_F^2 / sqrt(3) for 3x3 matrices
DET_CONSTANT = 1.0 / math.sqrt(3.0)
KUHN = [np.array([[0, 0, 0]] + [np.eye(3, dtype=int)[list(p[:k])].sum(axis=0) for k in (1, 2, 3)])
        for p in itertools.permutations(range(3))]


# --------------------------------------------------------------------------
# cell-set helpers


def corner_all(vertex_mask: np.ndarray) -> np.ndarray:
    """Cells whose eight corners all satisfy the vertex predicate."""
    out = np.ones_like(vertex_mask, dtype=bool)
    for c in CORNERS:
        out &= shift(vertex_mask, c)
    return out


def corner_any(cell_mask: np.ndarray) -> np.ndarray:
    """Vertices that are a corner of at least one cell of the mask."""
    out = np.zeros_like(cell_mask, dtype=bool)
    for c in CORNERS:
        out |= shift(cell_mask, -c)
    return out


def periodic_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Face-connected components of a cell mask on the periodic grid.

    Returns labels (0 outside the mask, 1..n inside) and n.
    """
    lab, n = label(mask)
    if n == 0:
        return lab, 0
    parent = np.arange(n + 1)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for axis in range(3):
        first = np.take(lab, 0, axis=axis)
        last = np.take(lab, -1, axis=axis)
        both = (first > 0) & (last > 0)
        for a, b in zip(first[both], last[both]):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(x) for x in range(n + 1)])
    uniq, new = np.unique(roots[1:], return_inverse=True)
    remap = np.concatenate([[0], new + 1])
    return remap[lab], len(uniq)


def boundary_area(mask: np.ndarray, field: MetricField, areas: np.ndarray | None = None) -> float:
    """Induced area of the faces separating the cell set from its complement."""
    if areas is None:
        areas = face_area_elements(field)
    total = 0.0
    for a in range(3):
        back = [0, 0, 0]
        back[a] = -1
        exposed = mask != shift(mask, back)
        total += float(np.sum(areas[a][exposed]))
    return total


# --------------------------------------------------------------------------
# pointwise Gram field


@dataclass(frozen=True, eq=False)
class PointwiseGramField:
    values: np.ndarray  # (N, N, N, 3, 3)
    coefficients: np.ndarray  # (N, N, N, 3, 3): [..., j, i] = i-th coordinate of du^j

    def entry(self, j: int, k: int) -> np.ndarray:
        return self.values[..., j, k]


def map_coefficients(hmap: HarmonicTorusMap, field: MetricField) -> np.ndarray:
    return np.stack([vertex_coefficients(f.cochain, field.h) for f in hmap.forms], axis=-2)


def pointwise_gram(hmap: HarmonicTorusMap, field: MetricField) -> PointwiseGramField:
    A = map_coefficients(hmap, field)
    g = np.einsum("...ji,...il,...kl->...jk", A, field.inverse, A)
    return PointwiseGramField(0.5 * (g + np.swapaxes(g, -1, -2)), A)


def coefficient_determinant(gram: PointwiseGramField) -> np.ndarray:
    return np.linalg.det(gram.coefficients)


def det_dU(gram: PointwiseGramField, field: MetricField) -> np.ndarray:
    """Pointwise Jacobian determinant of U relative to dV_g and the coordinate volume."""
    return coefficient_determinant(gram) / field.sqrt_det


# --------------------------------------------------------------------------
# constant approximation and tau


@dataclass(frozen=True)
class ConstantApprox:
    a: np.ndarray
    tau: float
    Lambda: float
    l1_deficit: np.ndarray  # (3, 3) L^1 norms of g^{jk} - a^{jk}
    l1_bound: float
    a_bound: float
    stern_product: float  # sup_jk |du^j|_3^(1/2) |du^k|_3 D_j^(1/2)
    verdicts: tuple


def stern_product(l3: np.ndarray, deficits: np.ndarray) -> float:
    return float(max(math.sqrt(l3[j]) * l3[k] * math.sqrt(max(deficits[j], 0.0))
                     for j in range(3) for k in range(3)))


def tau_value(volume: float, Lambda: float, product: float) -> float:
    return math.sqrt(36.0 / (volume * Lambda) * product)


def constant_approx(gram: PointwiseGramField, field: MetricField, Lambda: float, hmap: HarmonicTorusMap,
                    deficits=None) -> ConstantApprox:
    if Lambda <= 0:
        raise ParameterError(f"Lambda must be positive, got {Lambda}")
    V = total_volume(field)
    a = np.array([[integrate(gram.entry(j, k), field) for k in range(3)] for j in range(3)]) / V
    a = 0.5 * (a + a.T)
    l1 = np.array([[lp_norm(gram.entry(j, k) - a[j, k], 1, field) for k in range(3)] for j in range(3)])
    l2 = component_norms(hmap, field, 2)
    l3 = component_norms(hmap, field, 3)
    if deficits is None:
        gamma = christoffel(field)
        deficits = [stern_deficit(f, field, gamma) for f in hmap.forms]
    S = stern_product(l3, np.asarray(deficits))
    tau = tau_value(V, Lambda, S)
    l1_bound = 2.0 / Lambda * S
    a_bound = 2.0 / (V * Lambda) * S + max(l2[j] * l2[k] for j in range(3) for k in range(3)) / V
    eig_min = float(np.min(np.linalg.eigvalsh(a)))
    verdicts = (
        Verdict.le("g_int_close_to_const", float(l1.max()), l1_bound, tol=1e-10),
        Verdict.le("const_matrix_bounded", float(np.abs(a).max()), a_bound, tol=1e-10),
        Verdict.le("good_approx_matrix[psd]", -eig_min, 1e-10),
    )
    return ConstantApprox(a, tau, Lambda, l1, l1_bound, a_bound, S, verdicts)


# --------------------------------------------------------------------------
# level sets and Omega


def deviation_sums(gram: PointwiseGramField, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = gram.values - a
    return np.abs(d).sum(axis=(-1, -2)), (d ** 2).sum(axis=(-1, -2))


def level_sets(gram: PointwiseGramField, a: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Cell masks of ``E1 = {sum|g - a| < tau}`` and ``E2 = {sum|g - a|^2 < tau^2}``."""
    s1, s2 = deviation_sums(gram, a)
    return corner_all(s1 < tau), corner_all(s2 < tau ** 2)


@dataclass(frozen=True, eq=False)
class OmegaReport:
    mask: np.ndarray  # cell mask of Omega
    tau: float
    t0: float
    volume: float
    omega_vol: float
    complement_vol: float
    boundary: float
    sup_deviation: float
    e1_vol: float
    warning: bool
    verdicts: tuple
    diagnostics: dict


def _choose_threshold(s2: np.ndarray, tau: float, field: MetricField, areas: np.ndarray, workers: int = 1):
    ts = np.linspace(tau ** 2, 4 * tau ** 2, N_THRESHOLDS)

    def area(t):
        m = corner_all(s2 < t)
        return boundary_area(m, field, areas) if m.any() else math.inf

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(area, ts))
    else:
        vals = [area(t) for t in ts]
    i = int(np.argmin(vals))
    return float(ts[i]), vals


def extract_omega(gram: PointwiseGramField, approx: ConstantApprox, field: MetricField,
                  workers: int = 1) -> OmegaReport:
    tau, Lambda, a = approx.tau, approx.Lambda, approx.a
    V = total_volume(field)
    vols = cell_volumes(field)
    areas = face_area_elements(field)
    s1, s2 = deviation_sums(gram, a)
    # a constant field has tau = 0 and deviations at round-off level
    tau_eff = max(tau, 1e-12 * (1.0 + float(np.abs(a).max())))
    t0, _ = _choose_threshold(s2, tau_eff, field, areas, workers)
    sub = corner_all(s2 < t0)
    if not sub.any():
        raise ExtractionError(f"sublevel set at t0 = {t0:.3e} is empty")
    lab, n = periodic_components(sub)
    comp_vol = np.bincount(lab.ravel(), weights=vols.ravel(), minlength=n + 1)
    comp_vol[0] = -1.0
    mask = lab == int(np.argmax(comp_vol))
    omega_vol = float(vols[mask].sum())
    comp = V - omega_vol
    bdry = boundary_area(mask, field, areas)
    dev = np.abs(gram.values - a).max(axis=(-1, -2))
    sup_dev = float(dev[corner_any(mask)].max())
    e1, e2 = corner_all(s1 < tau_eff), corner_all(s2 < tau_eff ** 2)
    e1_vol = float(vols[e1].sum())
    verdicts = [
        Verdict.le("well_approximating_set[1]", sup_dev, 2 * tau_eff, tol=1e-12),
        Verdict.le("well_approximating_set[2]", 0.5 * V, omega_vol),
        Verdict.le("well_approximating_set[3]", bdry, 2 * V * Lambda * tau_eff, tol=1e-12),
        Verdict.le("well_approximating_set[4]", comp, 2 * V * tau_eff, tol=1e-12 * V),
        Verdict.flag("well_approximating_set[E1_in_E2]", bool(np.all(e2[e1]))),
    ]
    if tau < 1:
        verdicts.append(Verdict.le("first_approximating_set", 0.5 * V, e1_vol,
                                   note="hypothesis tau < 1 holds"))
    return OmegaReport(mask, tau, t0, V, omega_vol, comp, bdry, sup_dev, e1_vol, bool(tau > 0.125),
                       tuple(verdicts), {})


def write_omega_csv(path, report: OmegaReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "k", "in_omega"])
        for idx in np.ndindex(report.mask.shape):
            w.writerow([*idx, int(report.mask[idx])])


# --------------------------------------------------------------------------
# diagnostics on Omega


def det_gap_bound(g: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``C(3) (|g| + |a|)^2 |g - a|`` in the Frobenius norm, pointwise."""
    ng = np.linalg.norm(g, axis=(-1, -2))
    na = np.linalg.norm(a)
    nd = np.linalg.norm(g - a, axis=(-1, -2))
    return DET_CONSTANT * (ng + na) ** 2 * nd


def omega_diagnostics(report: OmegaReport, gram: PointwiseGramField, approx: ConstantApprox, field: MetricField,
                      degree: float, rneg_l2: float) -> dict:
    mask = report.mask
    h3 = field.h ** 3
    triple = coefficient_determinant(gram)
    cell_det = corner_mean(triple) * h3  # integral of det(dU) dV_g over each cell
    det_in = float(cell_det[mask].sum())
    det_out = float(cell_det[~mask].sum())
    jac = det_dU(gram, field)
    verts = corner_any(mask)
    sign_const = bool(np.all(jac[verts] > 0) or np.all(jac[verts] < 0))
    abs_in = float((corner_mean(np.abs(triple)) * h3)[mask].sum())
    trace = np.trace(gram.values, axis1=-2, axis2=-1)
    l3_out = integrate(np.maximum(trace, 0.0) ** 1.5, field, ~mask) if (~mask).any() else 0.0
    det_g = np.linalg.det(gram.values)
    det_a = float(np.linalg.det(approx.a))
    identity_gap = float(np.max(np.abs(det_g - triple ** 2 / field.sqrt_det ** 2)))
    gap = np.abs(det_g - det_a)
    gap_bound = det_gap_bound(gram.values, approx.a)
    det_target = (det_in / max(report.omega_vol, 1e-300)) ** 2 if report.omega_vol > 0 else 0.0
    r12 = rneg_l2 ** (1 / 12) if rneg_l2 > 0 else 0.0
    r4 = rneg_l2 ** 0.25 if rneg_l2 > 0 else 0.0

    def ratio(x, r):
        return float(x / r) if r > 0 else (0.0 if abs(x) <= 1e-12 else math.inf)

    measured_B = {
        "const_approximation": ratio(report.sup_deviation, r4),
        "small_compliment": ratio(report.complement_vol, r4),
        "small_boundary": ratio(report.boundary, r4),
        "bound_on_L3_compl_Omega": ratio(l3_out, r12),
        "up_lower_int_bound_detU_Omega": ratio(abs(det_in - 1.0), r12),
        "det_g_bounded_below_Omega": ratio(max(det_target - float(det_g[verts].min()), 0.0), r4),
        "det_a_bounded_below": ratio(max(det_target - det_a, 0.0), r4),
    }
    verdicts = (
        Verdict.close("bound_on_det_compl_Omega[degree_additivity]", det_in + det_out, degree, 1e-10),
        Verdict.le("detdU_has_sign_Omega", abs(abs_in - abs(det_in)), 1e-10 * max(1.0, abs_in)),
        Verdict.flag("detdU_has_sign_Omega[pointwise]", sign_const),
        Verdict.le("det_g_bounded_below_Omega[det_identity]", identity_gap,
                   1e-10 * max(1.0, float(np.abs(det_g).max()))),
        Verdict.le("det_estimate", float((gap - gap_bound)[verts].max()), 0.0, tol=1e-12),
    )
    return {
        "det_integral_omega": det_in,
        "det_integral_complement": det_out,
        "abs_det_integral_omega": abs_in,
        "sign_constant": sign_const,
        "dU_l3_cubed_complement": float(l3_out),
        "det_g_min_omega": float(det_g[verts].min()),
        "det_a": det_a,
        "det_identity_gap": identity_gap,
        "det_gap_max": float(gap[verts].max()),
        "det_gap_bound_min_slack": float((gap_bound - gap)[verts].min()),
        "det_constant": DET_CONSTANT,
        "measured_B": measured_B,
        "verdicts": verdicts,
    }


# --------------------------------------------------------------------------
# injectivity


def vertex_images(hmap: HarmonicTorusMap) -> list:
    return [lift(f) for f in hmap.forms]


def injectivity_count(hmap: HarmonicTorusMap | list, omega: np.ndarray, sample_count: int = 256,
                      seed: int = 0) -> tuple[int, np.ndarray]:
    """Largest number of Omega cells whose image under the piecewise-linear U covers a random point.

    Each cell is split into six Kuhn tetrahedra; a target counts once per
    (tetrahedron, deck translate) containing it.  Returns the maximum and the
    per-sample counts.
    """
    lifts = vertex_images(hmap) if isinstance(hmap, HarmonicTorusMap) else list(hmap)
    cells = np.argwhere(omega)
    if len(cells) == 0:
        raise ExtractionError("Omega is empty")
    tets = []
    for kuhn in KUHN:
        pts = cells[:, None, :] + kuhn[None]  # (M, 4, 3) lifted vertices
        tets.append(np.stack([u(pts) for u in lifts], axis=-1))
    T = np.concatenate(tets)  # (6M, 4, 3)
    origin = T[:, 0]
    E = np.transpose(T[:, 1:] - origin[:, None], (0, 2, 1))  # columns are edge vectors
    det = np.linalg.det(E)
    ok = np.abs(det) > 1e-14
    T, origin, E = T[ok], origin[ok], E[ok]
    Einv = np.linalg.inv(E)
    lo, hi = T.min(axis=1), T.max(axis=1)
    span = int(np.ceil(np.max(hi - lo))) + 1
    rng = np.random.default_rng(seed)
    ys = rng.random((sample_count, 3))
    counts = np.zeros(sample_count, dtype=np.int64)
    extra = np.array(list(itertools.product(range(span), repeat=3)))
    for s, y in enumerate(ys):
        m0 = np.ceil(lo - y)
        c = 0
        for e in extra:
            p = y + m0 + e
            inside_box = np.all(p <= hi, axis=1)
            if not inside_box.any():
                continue
            lam = np.einsum("nij,nj->ni", Einv[inside_box], p[inside_box] - origin[inside_box])
            bary = np.concatenate([1 - lam.sum(axis=1, keepdims=True), lam], axis=1)
            c += int(np.sum(np.all(bary >= -1e-12, axis=1)))
        counts[s] = c
    return int(counts.max()), counts


# --------------------------------------------------------------------------
# flat recovery


@dataclass(frozen=True, eq=False)
class FlatRecovery:
    g_flat: np.ndarray
    pullback: np.ndarray  # (N, N, N, 3, 3)
    deficit: np.ndarray  # pointwise |g - U^* g_F|_g
    sup_deficit: float


def recover_flat(a: np.ndarray, gram: PointwiseGramField, field: MetricField,
                 omega: np.ndarray | None = None) -> FlatRecovery:
    det = float(np.linalg.det(a))
    if det < DET_FLOOR:
        raise RecoveryError(f"approximating matrix is near singular (det = {det:.3e})", det)
    gF = np.linalg.inv(a)
    gF = 0.5 * (gF + gF.T)
    A = gram.coefficients
    P = np.einsum("...si,st,...tj->...ij", A, gF, A)
    T = field.values - P
    Gi = field.inverse
    sq = np.einsum("...ij,...jk,...kl,...li->...", Gi, T, Gi, T)
    deficit = np.sqrt(np.maximum(sq, 0.0))
    verts = np.ones(field.grid.shape, dtype=bool) if omega is None else corner_any(omega)
    return FlatRecovery(gF, P, deficit, float(deficit[verts].max()))


# --------------------------------------------------------------------------
# isoperimetric sanity bound


def slab_cheeger_bound(field: MetricField) -> float:
    """Smallest ``|boundary| / min(|S|, |S^c|)`` over periodic coordinate slabs of cells.

    The Cheeger constant is an infimum over all sets, so this is an upper bound.
    """
    vols = cell_volumes(field)
    areas = face_area_elements(field)
    V = float(vols.sum())
    N = field.N
    best = math.inf
    for axis in range(3):
        layer_vol = vols.sum(axis=tuple(b for b in range(3) if b != axis))
        layer_area = areas[axis].sum(axis=tuple(b for b in range(3) if b != axis))
        for start in range(N):
            for width in range(1, N):
                idx = [(start + i) % N for i in range(width)]
                vol = float(layer_vol[idx].sum())
                area = float(layer_area[start] + layer_area[(start + width) % N])
                best = min(best, area / min(vol, V - vol))
    return best
