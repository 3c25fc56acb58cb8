"""Intrinsic distances on subdomains, Gromov-Hausdorff upper bounds and the epsilon sweep."""
from __future__ import annotations

import csv
import itertools
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import ConvexHull

from . import approx as ax
from . import cover, harmap, hodge
from .errors import ConnectivityError, CorrespondenceError, ParameterError, TopologyError, TorusLabError
from .mesh import MetricField, cell_volumes, face_area_elements, sample_metric, shift, total_volume
from .report import Verdict

DIRECTIONS = cover.DIRECTIONS
SWEEP_COLUMNS = ("eps", "rneg_l2", "tau", "omega_c_vol", "omega_bdry", "c0_deficit", "gh_bound", "a_drift")
MONOTONE_TOL = 1e-9


# --------------------------------------------------------------------------
# periodic vertex graphs


def _omega_edge_mask(omega: np.ndarray, d) -> np.ndarray:
    """Vertices p whose edge to p + d lies in a closed cell of omega."""
    choices = [(0,) if c == 1 else (-1,) if c == -1 else (-1, 0) for c in d]
    out = np.zeros_like(omega, dtype=bool)
    for o in itertools.product(*choices):
        out |= shift(omega, o)
    return out


def periodic_graph(field: MetricField, omega: np.ndarray | None = None) -> sp.csr_matrix:
    """26-neighbour vertex graph on the torus, optionally restricted to the closure of a cell set."""
    N, h, G = field.N, field.h, field.values
    ids = np.arange(N ** 3).reshape(N, N, N)
    rows, cols, weights = [], [], []
    for d in DIRECTIONS:
        Gm = 0.5 * (G + shift(G, d))
        w = h * np.sqrt(np.einsum("i,...ij,j->...", d.astype(float), Gm, d.astype(float)))
        keep = np.ones(field.grid.shape, dtype=bool) if omega is None else _omega_edge_mask(omega, d)
        rows.append(ids[keep])
        cols.append(shift(ids, d)[keep])
        weights.append(w[keep])
    n = N ** 3
    A = sp.csr_matrix((np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return A.maximum(A.T)


@dataclass(frozen=True, eq=False)
class IntrinsicMetricSample:
    vertices: np.ndarray  # (m, 3) base vertex indices
    distances: np.ndarray  # (m, m)
    restricted: bool


def farthest_point_sample(graph: sp.csr_matrix, candidates: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Greedy farthest-point sample starting at the smallest candidate id; returns ids and their distance rows."""
    chosen = [int(candidates.min())]
    rows = [dijkstra(graph, directed=False, indices=chosen[0])]
    nearest = rows[0].copy()
    mask = np.zeros(graph.shape[0], dtype=bool)
    mask[candidates] = True
    for _ in range(1, m):
        score = np.where(mask, nearest, -1.0)
        score[np.isinf(score)] = -1.0
        nxt = int(np.argmax(score))
        if score[nxt] <= 0:
            break
        chosen.append(nxt)
        rows.append(dijkstra(graph, directed=False, indices=nxt))
        nearest = np.minimum(nearest, rows[-1])
    return np.array(chosen), np.array(rows)


def intrinsic_distances(omega: np.ndarray | None, field: MetricField, samples: int = 64,
                        ambient: bool = False) -> IntrinsicMetricSample:
    """Shortest-path distances among farthest-point samples of the closure of omega."""
    N = field.N
    full = np.ones(field.grid.shape, dtype=bool)
    omega = full if omega is None else np.asarray(omega, dtype=bool)
    verts = np.flatnonzero(ax.corner_any(omega).ravel())
    if samples < 1 or samples > len(verts):
        raise ParameterError(f"sample count {samples} outside [1, {len(verts)}]")
    graph = periodic_graph(field, None if ambient else omega)
    ids, rows = farthest_point_sample(graph, verts, samples)
    D = rows[:, ids]
    if not (np.all(np.isfinite(rows[0, verts])) and np.all(np.isfinite(D))):
        raise ConnectivityError("omega is disconnected: some sample pairs have no path inside it")
    D = 0.5 * (D + D.T)
    pts = np.stack(np.unravel_index(ids, (N, N, N)), axis=-1)
    return IntrinsicMetricSample(pts, D, not ambient)


def distances_between(field: MetricField, vertices: np.ndarray, omega: np.ndarray | None = None) -> np.ndarray:
    """Distance matrix among the given base vertices (ambient graph, or restricted to omega)."""
    N = field.N
    graph = periodic_graph(field, omega)
    ids = np.ravel_multi_index(tuple(np.asarray(vertices).T), (N, N, N))
    D = dijkstra(graph, directed=False, indices=ids)[:, ids]
    return 0.5 * (D + D.T)


# --------------------------------------------------------------------------
# flat comparison


def stencil_facets(G: np.ndarray) -> np.ndarray:
    """Facet inequalities ``n . x <= 1`` of the unit ball of the 26-neighbour graph norm."""
    dirs = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)], dtype=float)
    w = np.sqrt(np.einsum("ni,ij,nj->n", dirs, G, dirs))
    hull = ConvexHull(dirs / w[:, None])
    eq = hull.equations
    return eq[:, :3] / (-eq[:, 3:4])


def stencil_norm(v: np.ndarray, facets: np.ndarray) -> np.ndarray:
    """Graph-norm length of displacement vectors (rows of v)."""
    return np.max(v @ facets.T, axis=-1)


def stencil_calibration(G=None) -> float:
    """Largest ratio of the 26-neighbour graph norm to the true norm for metric G."""
    G = np.eye(3) if G is None else np.asarray(G, dtype=float)
    F = stencil_facets(G)
    # max over |v|_G = 1 of max_f n_f . v is max_f sqrt(n_f G^-1 n_f)
    return float(np.max(np.sqrt(np.einsum("fi,ij,fj->f", F, np.linalg.inv(G), F))))


def flat_distances(points: np.ndarray, g_flat: np.ndarray, frame: np.ndarray | None = None,
                   stencil: bool = True, reach: int = 2) -> np.ndarray:
    """Distances on the flat torus (R^3 / Z^3, g_flat) between image points.

    With ``stencil`` the comparison uses the graph norm of the pulled-back
    constant metric in domain coordinates, ``frame`` being the coefficient
    matrix of the linear part of U, so that graph and flat distances share
    the same discretisation error.
    """
    points = np.asarray(points, dtype=float)
    diff = points[None, :, :] - points[:, None, :]
    diff -= np.round(diff)
    shifts = np.array(list(itertools.product(range(-reach, reach + 1), repeat=3)), dtype=float)
    best = np.full(diff.shape[:2], np.inf)
    if stencil:
        A = np.eye(3) if frame is None else np.asarray(frame, dtype=float)
        Ainv = np.linalg.inv(A)
        facets = stencil_facets(A.T @ g_flat @ A)
        for m in shifts:
            best = np.minimum(best, stencil_norm((diff + m) @ Ainv.T, facets))
    else:
        for m in shifts:
            v = diff + m
            best = np.minimum(best, np.sqrt(np.einsum("...i,ij,...j->...", v, g_flat, v)))
    np.fill_diagonal(best, 0.0)
    return best


def gh_upper_bound(DA: np.ndarray, DB: np.ndarray, correspondence=None) -> float:
    """Half the distortion of a correspondence between two finite metric samples."""
    DA, DB = np.asarray(DA, dtype=float), np.asarray(DB, dtype=float)
    if correspondence is None:
        if DA.shape != DB.shape:
            raise CorrespondenceError("identity correspondence needs samples of equal size")
        correspondence = [(i, i) for i in range(len(DA))]
    pairs = np.asarray(correspondence, dtype=np.int64)
    if set(pairs[:, 0]) != set(range(len(DA))) or set(pairs[:, 1]) != set(range(len(DB))):
        raise CorrespondenceError("correspondence does not cover both samples")
    a, b = pairs[:, 0], pairs[:, 1]
    return 0.5 * float(np.max(np.abs(DA[np.ix_(a, a)] - DB[np.ix_(b, b)])))


def map_images(hmap: harmap.HarmonicTorusMap, vertices: np.ndarray) -> np.ndarray:
    lifts = [cover.lift(f) for f in hmap.forms]
    return np.stack([u(vertices) for u in lifts], axis=-1)


# --------------------------------------------------------------------------
# large connected subsets


@dataclass(frozen=True, eq=False)
class SubsetCertificate:
    component: np.ndarray | None
    volume: float
    boundary_E: float
    boundary_component: float
    complement: float
    holds: bool
    fragmentation_bound: float  # |boundary E| / Lambda
    fragment_volume: float  # sum of component volumes when none reaches half


def large_connected_subset(cells: np.ndarray, Lambda: float, field: MetricField) -> SubsetCertificate:
    if Lambda <= 0:
        raise ParameterError(f"Lambda must be positive, got {Lambda}")
    vols = cell_volumes(field)
    areas = face_area_elements(field)
    V = float(vols.sum())
    cells = np.asarray(cells, dtype=bool)
    bE = ax.boundary_area(cells, field, areas)
    lab, n = ax.periodic_components(cells)
    comp_vol = np.bincount(lab.ravel(), weights=vols.ravel(), minlength=n + 1)[1:]
    if n and comp_vol.max() >= 0.5 * V:
        k = int(np.argmax(comp_vol)) + 1
        comp = lab == k
        bO = ax.boundary_area(comp, field, areas)
        c = V - float(comp_vol[k - 1])
        holds = c <= bO / Lambda + 1e-12 and bO <= bE + 1e-12
        return SubsetCertificate(comp, float(comp_vol[k - 1]), bE, bO, c, bool(holds), bE / Lambda,
                                 float(comp_vol.sum()))
    return SubsetCertificate(None, 0.0, bE, 0.0, V, False, bE / Lambda, float(comp_vol.sum()))


# --------------------------------------------------------------------------
# two-dimensional detours


@dataclass(frozen=True)
class DetourPath:
    vertices: np.ndarray  # (K, 2)
    length: float
    ambient_length: float
    boundary_length: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.length <= self.bound


_NB2 = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)]


def _hole_components(holes: np.ndarray) -> list[np.ndarray]:
    """8-connected periodic components of the hole cells; raises if one wraps around the torus."""
    n = holes.shape[0]
    seen = np.zeros_like(holes, dtype=bool)
    comps = []
    for start in map(tuple, np.argwhere(holes)):
        if seen[start]:
            continue
        lifted = {start: start}
        queue = deque([start])
        seen[start] = True
        members = [start]
        while queue:
            c = queue.popleft()
            lc = lifted[c]
            for dx, dy in _NB2:
                nb = ((c[0] + dx) % n, (c[1] + dy) % n)
                if not holes[nb]:
                    continue
                lnb = (lc[0] + dx, lc[1] + dy)
                if nb in lifted:
                    if lifted[nb] != lnb:
                        raise TopologyError("a boundary component of A does not bound a disk in the slice")
                    continue
                lifted[nb] = lnb
                seen[nb] = True
                members.append(nb)
                queue.append(nb)
        comps.append(np.array(members))
    return comps


def _slice_graph(n: int, h: float, edge_ok) -> sp.csr_matrix:
    ids = np.arange(n * n).reshape(n, n)
    rows, cols, w = [], [], []
    for dx, dy in [(1, 0), (0, 1), (1, 1), (1, -1)]:
        keep = edge_ok(dx, dy)
        rows.append(ids[keep])
        cols.append(np.roll(ids, (-dx, -dy), axis=(0, 1))[keep])
        w.append(np.full(int(keep.sum()), h * math.hypot(dx, dy)))
    A = sp.csr_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(n * n, n * n))
    return A.maximum(A.T)


def _path(pred: np.ndarray, src: int, dst: int) -> list[int]:
    out = [dst]
    while out[-1] != src:
        p = int(pred[out[-1]])
        if p < 0:
            raise TopologyError("vertices are not connected")
        out.append(p)
    return out[::-1]


def detour_bounded_path_2d(A: np.ndarray, x, y) -> DetourPath:
    """Path inside the closed cell set A on a periodic square with length <= d(x, y) + |boundary A|.

    Built by replacing, hole by hole, the stretch of a shortest ambient path
    between its first and last contact with the hole by an arc of the hole's
    boundary.
    """
    A = np.asarray(A, dtype=bool)
    n = A.shape[0]
    h = 1.0 / n
    lab, ncomp = _periodic_components_2d(A)
    if ncomp != 1:
        raise TopologyError(f"A must be connected, found {ncomp} components")
    holes = ~A
    comps = _hole_components(holes) if holes.any() else []

    def vid(p):
        return int(p[0]) % n * n + int(p[1]) % n

    def closure(cells_mask):
        out = np.zeros_like(cells_mask)
        for c in ((0, 0), (1, 0), (0, 1), (1, 1)):
            out |= np.roll(cells_mask, c, axis=(0, 1))
        return out

    inA = closure(A)
    if not (inA[tuple(np.mod(x, n))] and inA[tuple(np.mod(y, n))]):
        raise TopologyError("endpoints must lie in the closure of A")
    full = _slice_graph(n, h, lambda dx, dy: np.ones((n, n), dtype=bool))
    dist, pred = dijkstra(full, directed=False, indices=vid(x), return_predecessors=True)
    path = _path(pred, vid(x), vid(y))
    ambient = float(dist[vid(y)])
    total_boundary = 0.0
    for comp in comps:
        B = np.zeros_like(A)
        B[comp[:, 0], comp[:, 1]] = True
        # boundary edges: axis edges with a B cell on one side and an A cell on the other
        bx = B ^ np.roll(B, 1, axis=1)  # edge along x at vertex (i, j): cells (i, j) and (i, j-1)
        by = B ^ np.roll(B, 1, axis=0)  # edge along y at vertex (i, j): cells (i, j) and (i-1, j)
        total_boundary += h * float(bx.sum() + by.sum())
        ring = _slice_graph(n, h, lambda dx, dy: bx if (dx, dy) == (1, 0) else by if (dx, dy) == (0, 1)
                            else np.zeros((n, n), dtype=bool))
        inB = closure(B).ravel()
        hits = [i for i, v in enumerate(path) if inB[v]]
        if not hits:
            continue
        s, t = hits[0], hits[-1]
        _, pred_b = dijkstra(ring, directed=False, indices=path[s], return_predecessors=True)
        arc = _path(pred_b, path[s], path[t]) if path[s] != path[t] else [path[s]]
        path = path[:s] + arc + path[t + 1:]
    pts = np.stack(np.unravel_index(np.array(path), (n, n)), axis=-1)
    step = np.diff(pts, axis=0)
    step = (step + n // 2) % n - n // 2
    length = float(np.sum(np.hypot(step[:, 0], step[:, 1])) * h)
    bound = ambient + total_boundary + 2 * h
    return DetourPath(pts, length, ambient, total_boundary, bound)


def _periodic_components_2d(mask: np.ndarray):
    lab3, n = ax.periodic_components(mask[:, :, None].repeat(1, axis=2))
    return lab3[:, :, 0], n


# --------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepParams:
    N: int = 32
    sigma: float = 0.5
    Lambda: float = 4.0
    eta: float = 0.1
    volume_cap: float = 2.0
    rneg_cap: float = 10.0
    kappa_cap: int = 64
    tol: float = hodge.DEFAULT_TOL
    samples: int = 64
    seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class SweepRow:
    eps: float
    rneg_l2: float
    tau: float
    omega_c_vol: float
    omega_bdry: float
    c0_deficit: float
    gh_bound: float
    a_drift: float
    membership: dict
    extras: dict

    def values(self) -> list[float]:
        return [getattr(self, c) for c in SWEEP_COLUMNS]


def frame_change(B_from: np.ndarray, B_to: np.ndarray) -> np.ndarray:
    """Integer matrix M with ``B_from @ M = B_to``."""
    M = np.linalg.solve(B_from.astype(float), B_to.astype(float))
    return np.rint(M).astype(np.int64)


def analyse_eps(spec, eps: float, params: SweepParams, reference=None) -> tuple[SweepRow, dict]:
    """Full pipeline for the family member g_eps; ``reference`` carries (a_0, B_0)."""
    metric = spec.scaled(eps)
    field = sample_metric(metric, params.N)
    hmap = harmap.build_map(field, params.tol)
    stern = harmap.stern_report(hmap, field)
    gram = ax.pointwise_gram(hmap, field)
    capprox = ax.constant_approx(gram, field, params.Lambda, hmap, stern.deficit)
    omega = ax.extract_omega(gram, capprox, field)
    flat = ax.recover_flat(capprox.a, gram, field, omega.mask)
    sample = intrinsic_distances(omega.mask, field, params.samples)
    images = map_images(hmap, sample.vertices)
    frame = hmap.basis_transform.T.astype(float)
    DF = flat_distances(images, flat.g_flat, frame)
    gh = gh_upper_bound(sample.distances, DF)
    if reference is None:
        drift = 0.0
    else:
        a0, B0 = reference
        M = frame_change(hmap.basis_transform, B0)
        drift = float(np.linalg.norm(M.T @ capprox.a @ M - a0))
    volume = total_volume(field)
    dom = cover.cube_domain(params.N)
    kappa = cover.covering_constant(dom, params.eta, field)
    membership = {
        "volume": bool(volume <= params.volume_cap),
        "rneg": bool(stern.rneg_l2 <= params.rneg_cap),
        "kappa": bool(kappa <= params.kappa_cap),
    }
    row = SweepRow(float(eps), stern.rneg_l2, capprox.tau, omega.complement_vol, omega.boundary,
                   flat.sup_deficit, gh, drift, membership,
                   {"volume": volume, "kappa": kappa, "degree": hmap.degree, "tau_warning": omega.warning})
    return row, {"a": capprox.a, "B": hmap.basis_transform}


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    verdicts: tuple
    rneg_floor: float


def _monotone(name: str, values, tol: float = MONOTONE_TOL) -> Verdict:
    worst = max((b - a for a, b in zip(values, values[1:])), default=0.0)
    return Verdict.le(f"Dong-Song_conv_for_F[{name} non-increasing]", worst, tol)


def sweep(spec, eps_list, params: SweepParams = SweepParams()) -> SweepResult:
    """Run the pipeline along a strictly decreasing epsilon list for the family ``spec.scaled(eps)``."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ParameterError(f"epsilon list must be strictly decreasing, got {eps_list}")
    if any(e < 0 for e in eps_list):
        raise ParameterError("epsilon values must be non-negative")
    try:
        _, ref = analyse_eps(spec, 0.0, params)
    except TorusLabError as exc:
        raise type(exc)(f"epsilon=0 reference: {exc}") from exc
    reference = (ref["a"], ref["B"])
    floor = harmap.negative_curvature_l2(sample_metric(spec.scaled(0.0), params.N))

    def one(item):
        i, eps = item
        try:
            return analyse_eps(spec, eps, params, reference)[0]
        except TorusLabError as exc:
            raise type(exc)(f"epsilon[{i}]={eps}: {exc}") from exc

    items = list(enumerate(eps_list))
    if params.workers > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            rows = list(pool.map(one, items))
    else:
        rows = [one(it) for it in items]
    verdicts = [_monotone(c, [getattr(r, c) for r in rows])
                for c in ("rneg_l2", "c0_deficit", "gh_bound", "a_drift")]
    for r0, r1 in zip(rows, rows[1:]):
        if r1.eps > 0 and abs(r0.eps - 2 * r1.eps) <= 1e-12 * r0.eps:
            num, den = r0.rneg_l2 - floor, 2 * (r1.rneg_l2 - floor)
            ratio = num / den if den > 0 else math.inf
            verdicts.append(Verdict.close(f"Dong-Song_conv_for_F[rneg halving {r0.eps:g}->{r1.eps:g}]",
                                          ratio, 1.0, 0.2))
    return SweepResult(tuple(rows), tuple(verdicts), floor)


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(float(v)) for v in r.values()])
