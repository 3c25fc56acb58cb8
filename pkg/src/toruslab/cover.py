"""Lifts to the universal cover, fundamental domains and covering constants.

Lifted cells and vertices are integer triples ``I`` in R^3 grid units; the
base index is ``I mod N`` and the deck translate is ``I // N``.  A window of
radius ``r`` is the box of translates ``{-r, ..., r}^3``.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import label
from scipy.sparse.csgraph import dijkstra

from .errors import ConsistencyError, DomainError, ParameterError, WindowError
from .hodge import HarmonicOneForm
from .mesh import MetricField, cell_metric, shift, total_volume
from .report import Verdict

DIRECTIONS = np.array([d for d in itertools.product((-1, 0, 1), repeat=3)
                       if d > (0, 0, 0)])  # 13 half-directions; the graph is undirected
TIE_TOL = 1e-9
MAX_WINDOW = 2


# --------------------------------------------------------------------------
# lifted graphs


@dataclass(frozen=True, eq=False)
class LiftedWindow:
    """Box of ``(2r+1)N`` lifted nodes per axis carrying a pulled-back metric graph."""

    N: int
    radius: int
    h: float
    graph: sp.csr_matrix
    nodes: str  # "cells" or "vertices"
    metric: np.ndarray  # lifted metric samples, shape (L, L, L, 3, 3)

    @property
    def side(self) -> int:
        return (2 * self.radius + 1) * self.N

    @property
    def origin(self) -> int:
        return -self.radius * self.N

    def node_id(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.int64) - self.origin
        L = self.side
        if np.any(p < 0) or np.any(p >= L):
            raise WindowError(f"lifted point outside window of radius {self.radius}")
        return np.ravel_multi_index(tuple(p.T), (L, L, L))

    def node_points(self, ids) -> np.ndarray:
        L = self.side
        return np.stack(np.unravel_index(np.asarray(ids), (L, L, L)), axis=-1) + self.origin

    def on_boundary(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.int64) - self.origin
        return np.any((p == 0) | (p == self.side - 1), axis=-1)

    def distances(self, sources, limit: float = np.inf) -> np.ndarray:
        """Graph distance from the nearest source to every node, shape (L, L, L)."""
        ids = np.atleast_1d(self.node_id(np.atleast_2d(sources)))
        d = dijkstra(self.graph, directed=False, indices=ids, min_only=True, limit=limit)
        L = self.side
        return d.reshape(L, L, L)


def lattice_graph(G: np.ndarray, h: float, radius: int) -> tuple[sp.csr_matrix, np.ndarray]:
    """26-neighbour graph on a lifted box, weights ``h * sqrt(d^T G_mid d)``."""
    N = G.shape[0]
    reps = 2 * radius + 1
    Gl = np.tile(G, (reps, reps, reps, 1, 1))
    L = N * reps
    ids = np.arange(L ** 3).reshape(L, L, L)
    rows, cols, weights = [], [], []
    for d in DIRECTIONS:
        src = tuple(slice(max(0, -c), L - max(0, c)) for c in d)
        dst = tuple(slice(max(0, c), L - max(0, -c)) for c in d)
        Gm = 0.5 * (Gl[src] + Gl[dst])
        w = h * np.sqrt(np.einsum("i,...ij,j->...", d.astype(float), Gm, d.astype(float)))
        rows.append(ids[src].ravel())
        cols.append(ids[dst].ravel())
        weights.append(w.ravel())
    A = sp.csr_matrix((np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(L ** 3, L ** 3))
    return A, Gl


def lifted_window(field: MetricField, radius: int = 1, nodes: str = "vertices") -> LiftedWindow:
    if radius < 1:
        raise ParameterError(f"window radius must be >= 1, got {radius}")
    if nodes == "cells":
        G = cell_metric(field)
    elif nodes == "vertices":
        G = field.values
    else:
        raise ParameterError(f"nodes must be 'cells' or 'vertices', got {nodes!r}")
    A, Gl = lattice_graph(G, field.h, radius)
    return LiftedWindow(field.N, radius, field.h, A, nodes, Gl)


# --------------------------------------------------------------------------
# lifts


@dataclass(frozen=True, eq=False)
class LiftedFunction:
    """``u_hat(x + nu N) = base[x] + <periods, nu>`` on lifted vertices."""

    base: np.ndarray  # (N, N, N) values on the base vertices
    periods: np.ndarray  # integer vector

    @property
    def N(self) -> int:
        return self.base.shape[0]

    def __call__(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.int64)
        nu = np.floor_divide(p, self.N)
        x = p - nu * self.N
        return self.base[x[..., 0], x[..., 1], x[..., 2]] + nu @ self.periods


def loop_defect(cochain: np.ndarray) -> float:
    """Largest circulation of a one-cochain around a grid face."""
    out = 0.0
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        eb, ec = [0, 0, 0], [0, 0, 0]
        eb[b] = 1
        ec[c] = 1
        circ = cochain[b] + shift(cochain[c], eb) - shift(cochain[b], ec) - cochain[c]
        out = max(out, float(np.max(np.abs(circ))))
    return out


def lift(form: HarmonicOneForm | np.ndarray, periods=None, tol: float = 1e-10) -> LiftedFunction:
    """Integrate a closed cochain from vertex 0 and extend by the integer periods."""
    if isinstance(form, HarmonicOneForm):
        cochain, periods = form.cochain, form.cls.vector
    else:
        cochain = np.asarray(form, dtype=float)
        if periods is None:
            raise ParameterError("periods are required for a bare cochain")
    periods = np.asarray(periods, dtype=np.int64)
    scale = max(1.0, float(np.max(np.abs(cochain))))
    defect = loop_defect(cochain)
    if defect > tol * scale:
        raise ConsistencyError(f"cochain is not closed: max loop defect {defect:.3e}", defect)
    N = cochain.shape[1]
    # path: along axis 0 at (., 0, 0), then axis 1 at (i, ., 0), then axis 2
    u0 = np.concatenate([[0.0], np.cumsum(cochain[0][:-1, 0, 0])])
    u1 = np.concatenate([np.zeros((N, 1)), np.cumsum(cochain[1][:, :-1, 0], axis=1)], axis=1)
    u2 = np.concatenate([np.zeros((N, N, 1)), np.cumsum(cochain[2][:, :, :-1], axis=2)], axis=2)
    base = u0[:, None, None] + u1[:, :, None] + u2
    loops = np.array([cochain[0][:, 0, 0].sum(), cochain[1][0, :, 0].sum(), cochain[2][0, 0, :].sum()])
    if np.max(np.abs(loops - periods)) > max(tol, 1e-8) * N:
        raise ConsistencyError(f"cochain periods {loops} disagree with {periods}",
                               float(np.max(np.abs(loops - periods))))
    return LiftedFunction(base, periods)


# --------------------------------------------------------------------------
# fundamental domains


@dataclass(frozen=True, eq=False)
class FundamentalDomainCells:
    N: int
    cells: np.ndarray  # (N^3, 3) lifted cell indices
    kind: str
    basepoint: tuple | None = None
    translate: tuple = (0, 0, 0)
    checks: dict = dc_field(default_factory=dict)

    def translated(self, nu) -> "FundamentalDomainCells":
        nu = np.asarray(nu, dtype=np.int64)
        return FundamentalDomainCells(self.N, self.cells + nu * self.N, self.kind, self.basepoint,
                                      tuple(int(a + b) for a, b in zip(self.translate, nu)), self.checks)

    def assignments(self) -> np.ndarray:
        """Rows ``(i, j, k, nu1, nu2, nu3)`` giving each base cell's chosen lift."""
        nu = np.floor_divide(self.cells, self.N)
        return np.concatenate([self.cells - nu * self.N, nu], axis=1)

    def vertices(self) -> np.ndarray:
        """All lifted corners of the domain's cells (closed-cell vertex set)."""
        corners = (self.cells[:, None, :] + np.array(list(itertools.product((0, 1), repeat=3)))[None]).reshape(-1, 3)
        return np.unique(corners, axis=0)

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        return self.cells.min(axis=0), self.cells.max(axis=0)


def _box_mask(cells: np.ndarray):
    lo = cells.min(axis=0) - 1
    hi = cells.max(axis=0) + 2
    mask = np.zeros(tuple(hi - lo), dtype=bool)
    p = cells - lo
    mask[p[:, 0], p[:, 1], p[:, 2]] = True
    return mask, lo


def verify_domain(cells: np.ndarray, N: int) -> dict:
    """Coverage, interior injectivity and connectivity of a lifted cell set."""
    base = np.mod(cells, N)
    flat = np.ravel_multi_index(tuple(base.T), (N, N, N))
    counts = np.bincount(flat, minlength=N ** 3)
    covers = bool(np.all(counts >= 1))
    mask, lo = _box_mask(cells)
    interior = np.ones_like(mask)
    for d in itertools.product((-1, 0, 1), repeat=3):
        interior &= np.roll(mask, d, axis=(0, 1, 2))
    interior &= mask
    p = cells - lo
    is_interior = interior[p[:, 0], p[:, 1], p[:, 2]]
    injective = bool(np.all(counts[flat[is_interior]] == 1))
    _, n_comp = label(mask, structure=np.ones((3, 3, 3)))
    boundary_fraction = float(1.0 - is_interior.mean())
    return {"covers": covers, "interior_injective": injective, "connected": bool(n_comp == 1),
            "boundary_fraction": boundary_fraction}


def cube_domain(N: int) -> FundamentalDomainCells:
    cells = np.stack(np.meshgrid(*[np.arange(N)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    return FundamentalDomainCells(N, cells, "unit_cube", None, (0, 0, 0), verify_domain(cells, N))


def _nu_order(radius: int) -> np.ndarray:
    return np.array(sorted(itertools.product(range(-radius, radius + 1), repeat=3)), dtype=np.int64)


def dirichlet_domain(field: MetricField, basepoint=(0, 0, 0), radius: int = 1) -> FundamentalDomainCells:
    """Cells whose nearest lift of ``basepoint`` (a base cell) is the untranslated one."""
    N = field.N
    basepoint = tuple(int(b) % N for b in basepoint)
    for r in range(radius, MAX_WINDOW + 1):
        win = lifted_window(field, r, "cells")
        D = win.distances([basepoint])
        nus = _nu_order(r)
        # D at lifted cell x + mu N, one slab per mu, lexicographic order of mu
        stack = np.empty((len(nus), N, N, N))
        for n, mu in enumerate(nus):
            s = (mu + r) * N
            stack[n] = D[s[0]:s[0] + N, s[1]:s[1] + N, s[2]:s[2] + N]
        best = stack.min(axis=0)
        within = stack <= best + TIE_TOL * np.maximum(best, 1.0)
        choice = np.argmax(within, axis=0)  # first (lexicographic) tie
        grid = np.stack(np.meshgrid(*[np.arange(N)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
        cells = grid + nus[choice.ravel()] * N
        if not np.any(win.on_boundary(cells)) and np.all(np.isfinite(best)):
            return FundamentalDomainCells(N, cells, "dirichlet", basepoint, (0, 0, 0), verify_domain(cells, N))
    raise WindowError(f"Dirichlet domain reaches the boundary of the largest window (radius {MAX_WINDOW})")


def translated_dirichlet(domain: FundamentalDomainCells, nu) -> FundamentalDomainCells:
    return domain.translated(nu)


# --------------------------------------------------------------------------
# covering constant and oscillation


@dataclass(frozen=True, eq=False)
class Neighbourhood:
    """Lifted cells and vertices within graph distance eta of a domain's closure."""

    eta: float
    cells: np.ndarray
    vertices: np.ndarray
    radius: int


def neighbourhood(domain: FundamentalDomainCells, eta: float, field: MetricField,
                  radius: int | None = None) -> Neighbourhood:
    if eta <= 0:
        raise ParameterError(f"eta must be positive, got {eta}")
    for r in range(radius or 1, MAX_WINDOW + 1):
        win = lifted_window(field, r, "vertices")
        try:
            D = win.distances(domain.vertices(), limit=eta * (1 + 1e-12))
        except WindowError:
            continue
        close = D <= eta * (1 + 1e-12)
        vids = np.flatnonzero(close.ravel())
        vpts = win.node_points(vids)
        if np.any(win.on_boundary(vpts)):
            continue
        # a cell is in V_eta when any of its corners is
        cell_mask = np.zeros_like(close)
        for c in itertools.product((0, 1), repeat=3):
            cell_mask |= np.roll(close, tuple(-x for x in c), axis=(0, 1, 2))
        cell_mask[-1, :, :] = cell_mask[:, -1, :] = cell_mask[:, :, -1] = False
        cpts = win.node_points(np.flatnonzero(cell_mask.ravel()))
        return Neighbourhood(eta, cpts, vpts, r)
    raise WindowError(f"eta-neighbourhood reaches the boundary of the largest window (radius {MAX_WINDOW})")


def covering_constant(domain: FundamentalDomainCells, eta: float, field: MetricField,
                      nbhd: Neighbourhood | None = None) -> int:
    """Largest number of lifts of a single base cell inside the eta-neighbourhood of the domain."""
    if nbhd is None:
        nbhd = neighbourhood(domain, eta, field)
    N = domain.N
    base = np.ravel_multi_index(tuple(np.mod(nbhd.cells, N).T), (N, N, N))
    return int(np.bincount(base, minlength=N ** 3).max())


@dataclass(frozen=True)
class OscillationReport:
    osc_domain: float
    osc_neighbourhood: float
    bound_domain: float
    bound_neighbourhood: float
    verdicts: tuple


def oscillation_bounds(u: LiftedFunction, domain: FundamentalDomainCells, eta: float, kappa: int, sigma: float,
                       field: MetricField, du_l2: float, nbhd: Neighbourhood | None = None,
                       volume: float | None = None, tol: float = 1e-9) -> OscillationReport:
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if nbhd is None:
        nbhd = neighbourhood(domain, eta, field)
    if volume is None:
        volume = total_volume(field)
    vals = u(domain.vertices())
    osc_v = float(vals.max() - vals.min())
    vals_eta = u(nbhd.vertices)
    osc_eta = float(vals_eta.max() - vals_eta.min())
    bound_v = float(np.sqrt(volume) * du_l2 / sigma)
    bound_eta = kappa * bound_v
    verdicts = (Verdict.le("u_bounded_fund_domain", osc_v, bound_v, tol),
                Verdict.le("sup-inf_nhbd_bound", osc_eta, bound_eta, tol))
    return OscillationReport(osc_v, osc_eta, bound_v, bound_eta, verdicts)


# --------------------------------------------------------------------------
# chains of domains


@dataclass(frozen=True)
class DomainChainPath:
    vertices: np.ndarray  # (K, 3) lifted vertices
    segments: tuple  # (translate index, start position, end position)
    times: tuple  # cumulative coordinate length at every segment boundary

    @property
    def sequence(self) -> tuple:
        return tuple(s[0] for s in self.segments)


_CORNERS = np.array(list(itertools.product((0, 1), repeat=3)))
_PAIRS = np.array(list(itertools.combinations(range(8), 2)))


class _CellUnionGraph:
    """Vertices of a union of closed cells; edges join corners of a common cell."""

    def __init__(self, cell_sets):
        allc = np.concatenate(cell_sets)
        self.lo = allc.min(axis=0)
        self.shape = tuple(allc.max(axis=0) - self.lo + 2)
        n = int(np.prod(self.shape))
        self.graphs = [self._graph(c, n) for c in cell_sets]
        self.members = np.array([np.asarray((g + g.T).sum(axis=0)).ravel() > 0 for g in self.graphs])
        self.union = sp.csr_matrix(self.graphs[0].shape)
        for g in self.graphs:
            self.union = self.union.maximum(g)

    def ids(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.int64) - self.lo
        if np.any(p < 0) or np.any(p >= np.array(self.shape)):
            raise DomainError("point lies outside the union of translates")
        return np.ravel_multi_index(tuple(np.moveaxis(p, -1, 0)), self.shape)

    def points(self, ids) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(ids), self.shape), axis=-1) + self.lo

    def _graph(self, cells, n) -> sp.csr_matrix:
        corner_ids = self.ids(cells[:, None, :] + _CORNERS[None])  # (M, 8)
        w = np.linalg.norm(_CORNERS[_PAIRS[:, 0]] - _CORNERS[_PAIRS[:, 1]], axis=1)
        rows = corner_ids[:, _PAIRS[:, 0]].ravel()
        cols = corner_ids[:, _PAIRS[:, 1]].ravel()
        ww = np.tile(w, len(cells))
        # edges shared by neighbouring cells appear more than once; keep one copy
        key, first = np.unique(rows * n + cols, return_index=True)
        return sp.csr_matrix((ww[first], (rows[first], cols[first])), shape=(n, n))

    def shortest(self, src: int, dst: int, graph: sp.csr_matrix | None = None) -> list[int]:
        graph = self.union if graph is None else graph
        dist, pred = dijkstra(graph, directed=False, indices=src, return_predecessors=True)
        if not np.isfinite(dist[dst]):
            raise DomainError("no path between the requested vertices")
        path = [dst]
        while path[-1] != src:
            path.append(int(pred[path[-1]]))
        return path[::-1]


def domain_chain_path(x0, x1, translates) -> DomainChainPath:
    """Vertex path from x0 to x1 that never re-enters a translate once it has left it.

    Starting from a shortest path in the union, each segment jumps to the last
    time the path meets the current translate and is rerouted inside it.
    """
    translates = list(translates)
    if not translates:
        raise DomainError("no translates supplied")
    g = _CellUnionGraph([t.cells for t in translates])
    s, t = (int(i) for i in g.ids(np.array([x0, x1])))
    if not (g.members[:, s].any() and g.members[:, t].any()):
        raise DomainError("endpoint is not a vertex of the union of translates")
    base = g.shortest(s, t)
    on_path = g.members[:, base]  # (K, len)
    out: list[int] = [base[0]]
    segments = []
    used: set[int] = set()
    pos = 0
    while True:
        candidates = [k for k in range(len(translates)) if on_path[k, pos] and k not in used]
        if not candidates:
            raise DomainError("surgery failed: no unused translate contains the transition vertex")

        def last(k):
            return pos + int(np.flatnonzero(on_path[k, pos:])[-1])

        k = max(candidates, key=lambda c: (last(c), -c))
        end = last(k)
        piece = g.shortest(base[pos], base[end], g.graphs[k])
        start_out = len(out) - 1
        out.extend(piece[1:])
        segments.append((k, start_out, len(out) - 1))
        used.add(k)
        if end == len(base) - 1:
            break
        pos = end
    pts = g.points(out)
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1) / translates[0].N
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    times = tuple(float(cum[e]) for _, _, e in segments)
    return DomainChainPath(pts, tuple(segments), times)


def write_domain_csv(path, domains) -> None:
    """Rows ``i, j, k, nu1, nu2, nu3, kind`` for every base cell of every domain."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "k", "nu1", "nu2", "nu3", "kind"])
        for d in domains:
            for row in d.assignments():
                w.writerow([int(x) for x in row] + [d.kind])
