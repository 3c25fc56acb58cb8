import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.csgraph import dijkstra

from toruslab import approx as ax
from toruslab import convergence as cv
from toruslab import harmap
from toruslab.errors import ConnectivityError, CorrespondenceError, ParameterError, TopologyError
from toruslab.mesh import ConstantMetric, constant_field

from conftest import FAMILY

DIRS = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)], dtype=float)


def lp_graph_norm(v, G):
    """Cheapest nonnegative combination of stencil steps summing to v."""
    cost = np.sqrt(np.einsum("ni,ij,nj->n", DIRS, G, DIRS))
    res = linprog(cost, A_eq=DIRS.T, b_eq=v, bounds=(0, None), method="highs")
    return res.fun


def test_stencil_norm_matches_linear_program():
    rng = np.random.default_rng(3)
    for G in (np.eye(3), np.diag([1.0, 4.0, 9.0])):
        facets = cv.stencil_facets(G)
        for v in rng.standard_normal((20, 3)):
            assert cv.stencil_norm(v[None], facets)[0] == pytest.approx(lp_graph_norm(v, G), rel=1e-9)


def test_stencil_calibration_values():
    rng = np.random.default_rng(4)
    v = rng.standard_normal((400, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    sampled = max(lp_graph_norm(x, np.eye(3)) for x in v)
    c = cv.stencil_calibration()
    assert sampled <= c + 1e-9 and c - sampled < 5e-3
    assert c == pytest.approx(1.12809, abs=1e-5)
    assert cv.stencil_calibration(np.diag([1.0, 4.0, 9.0])) == pytest.approx(1.27821, abs=1e-5)


def test_intrinsic_at_least_ambient(conformal16):
    omega = np.ones((16, 16, 16), dtype=bool)
    omega[4:9, 4:9, :] = False
    verts = np.array([[0, 0, 0], [10, 10, 3], [2, 12, 7], [12, 1, 15]])
    amb = cv.distances_between(conformal16, verts)
    res = cv.distances_between(conformal16, verts, omega)
    assert np.all(res >= amb - 1e-12)
    assert np.array_equal(cv.distances_between(conformal16, verts, np.ones_like(omega)), amb)


def test_disconnected_omega_raises():
    f = constant_field(np.eye(3), 8)
    omega = np.zeros((8, 8, 8), dtype=bool)
    omega[0:2, 0:2, 0:2] = omega[4:6, 4:6, 4:6] = True
    with pytest.raises(ConnectivityError):
        cv.intrinsic_distances(omega, f, samples=16)
    with pytest.raises(ParameterError):
        cv.intrinsic_distances(None, f, samples=0)


def test_gh_upper_bound_properties():
    rng = np.random.default_rng(0)
    X = rng.random((10, 3))
    D = np.linalg.norm(X[:, None] - X[None], axis=-1)
    Y = rng.random((10, 3))
    E = np.linalg.norm(Y[:, None] - Y[None], axis=-1)
    assert cv.gh_upper_bound(D, D) == 0.0
    assert cv.gh_upper_bound(D, E) == pytest.approx(cv.gh_upper_bound(E, D), abs=1e-12)
    assert cv.gh_upper_bound(D, 1.5 * D) == pytest.approx(0.25 * D.max())
    with pytest.raises(CorrespondenceError):
        cv.gh_upper_bound(D, E[:5, :5])
    with pytest.raises(CorrespondenceError):
        cv.gh_upper_bound(D, E, [(0, 0)])


def test_flat_graph_distances_equal_flat_torus(flat_matrix):
    f = constant_field(flat_matrix, 8)
    m = harmap.build_map(f)
    sample = cv.intrinsic_distances(None, f, samples=24)
    gram = ax.pointwise_gram(m, f)
    gF = np.linalg.inv(gram.values[0, 0, 0])
    DF = cv.flat_distances(cv.map_images(m, sample.vertices), gF, m.basis_transform.T.astype(float))
    assert cv.gh_upper_bound(sample.distances, DF) < 1e-10


def test_large_connected_subset():
    f = constant_field(np.eye(3), 8)
    cells = np.ones((8, 8, 8), dtype=bool)
    cells[0, 0, 0] = False
    cert = cv.large_connected_subset(cells, 1.0, f)
    assert cert.holds and cert.complement == pytest.approx(1 / 512)
    split = np.zeros((8, 8, 8), dtype=bool)
    split[0:3] = split[4:7] = True
    cert = cv.large_connected_subset(split, 1.0, f)
    assert cert.component is None and not cert.holds


def _dijkstra_in_A(A, x, y):
    n = A.shape[0]
    closure = A | np.roll(A, 1, 0) | np.roll(A, 1, 1) | np.roll(A, (1, 1), (0, 1))
    rows, cols, w = [], [], []
    for i, j in itertools.product(range(n), range(n)):
        for dx, dy in [(1, 0), (0, 1), (1, 1), (1, -1)]:
            a, b = (i, j), ((i + dx) % n, (j + dy) % n)
            if not (closure[a] and closure[b]):
                continue
            if dx and dy:  # diagonals cross the cell between the endpoints
                ok = A[i, j] if dy == 1 else A[i, (j - 1) % n]
            else:  # an axis edge needs an A cell on one side
                side = [(i, j), (i, (j - 1) % n)] if dx else [(i, j), ((i - 1) % n, j)]
                ok = any(A[s] for s in side)
            if ok:
                rows.append(a[0] * n + a[1])
                cols.append(b[0] * n + b[1])
                w.append(np.hypot(dx, dy) / n)
    M = sp.csr_matrix((w, (rows, cols)), shape=(n * n, n * n))
    return dijkstra(M, directed=False, indices=x[0] * n + x[1])[y[0] * n + y[1]]


def test_detour_full_slice_is_ambient():
    A = np.ones((16, 16), dtype=bool)
    p = cv.detour_bounded_path_2d(A, (1, 2), (9, 13))
    assert p.length == pytest.approx(p.ambient_length) and p.boundary_length == 0


@pytest.mark.parametrize("holes", [[(slice(5, 9), slice(5, 9))],
                                   [(slice(4, 7), slice(4, 7)), (slice(9, 12), slice(10, 13))]])
def test_detour_with_holes(holes):
    A = np.ones((16, 16), dtype=bool)
    for hx in holes:
        A[hx] = False
    p = cv.detour_bounded_path_2d(A, (2, 2), (14, 14))
    assert p.holds
    assert p.length >= _dijkstra_in_A(A, (2, 2), (14, 14)) - 1e-12
    assert p.length >= p.ambient_length - 1e-12


def test_detour_wrapping_hole_raises():
    A = np.ones((8, 8), dtype=bool)
    A[:, 3] = False
    with pytest.raises(TopologyError):
        cv.detour_bounded_path_2d(A, (0, 0), (0, 6))


def test_frame_change():
    B0 = np.array([[1, 0, 0], [0, 0, 1], [0, 1, 0]])
    M = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 1]])
    assert np.array_equal(cv.frame_change(B0, B0 @ M), M)


def test_small_sweep(tmp_path):
    params = cv.SweepParams(N=8, sigma=0.5, samples=16, volume_cap=1.0 - 1e-9)
    res = cv.sweep(FAMILY, [0.1, 0.05], params)
    assert [r.eps for r in res.rows] == [0.1, 0.05]
    assert all(not r.membership["volume"] for r in res.rows)  # flag only; the run still completes
    assert not any(v.anchor.startswith("family_of_metrics") for v in res.verdicts)
    out = tmp_path / "sweep.csv"
    cv.write_sweep_csv(out, res.rows)
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(cv.SWEEP_COLUMNS) and len(lines) == 3


def test_eps_zero_row_is_exact():
    params = cv.SweepParams(N=8, samples=16)
    row, _ = cv.analyse_eps(FAMILY, 0.0, params)
    assert row.rneg_l2 == 0.0 and row.c0_deficit <= 1e-8 and row.gh_bound <= 1e-10 and row.a_drift == 0.0


def test_sweep_rejects_increasing_eps():
    with pytest.raises(ParameterError):
        cv.sweep(ConstantMetric(tuple(np.eye(3).ravel())), [0.1, 0.2])
