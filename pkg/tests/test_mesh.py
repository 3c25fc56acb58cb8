import numpy as np
import pytest
import sympy as sp

from toruslab.errors import MetricError, ShapeError
from toruslab.mesh import (ConformalMetric, DirectFourierMetric, FourierTerm, MetricField, build_grid,
                           christoffel, constant_field, integrate, lp_norm, metric_from_spec, sample_metric,
                           scalar_curvature, total_volume)

from conftest import FAMILY


def _symbolic_curvature(metric: ConformalMetric):
    """Christoffel symbols and scalar curvature straight from the coordinate formulas."""
    X = sp.symbols("x y z")
    f = sum(t.amplitude * sp.cos(2 * sp.pi * sum(k * x for k, x in zip(t.wave, X)) + t.phase)
            for t in metric.terms)
    G = sp.exp(2 * f) * sp.Matrix(3, 3, list(metric.base))
    Gi = G.inv()
    Gam = [[[sum(Gi[m, k] * (sp.diff(G[k, i], X[j]) + sp.diff(G[k, j], X[i]) - sp.diff(G[i, j], X[k]))
                 for k in range(3)) / 2 for j in range(3)] for i in range(3)] for m in range(3)]
    ric = sp.zeros(3, 3)
    for i in range(3):
        for j in range(3):
            ric[i, j] = sum(sp.diff(Gam[m][i][j], X[m]) - sp.diff(Gam[m][i][m], X[j]) for m in range(3)) + \
                sum(Gam[m][m][k] * Gam[k][i][j] - Gam[m][j][k] * Gam[k][i][m] for m in range(3) for k in range(3))
    R = sum(Gi[i, j] * ric[i, j] for i in range(3) for j in range(3))
    fns = [[[sp.lambdify(X, Gam[m][i][j], "numpy") for j in range(3)] for i in range(3)] for m in range(3)]

    def gam_fn(x):
        out = np.zeros(x.shape[:-1] + (3, 3, 3))
        for m in range(3):
            for i in range(3):
                for j in range(3):
                    out[..., m, i, j] = fns[m][i][j](x[..., 0], x[..., 1], x[..., 2])
        return out

    R_fn = sp.lambdify(X, R, "numpy")
    return gam_fn, R_fn


def test_grid_counts():
    g = build_grid(8)
    assert g.n_vertices == 512 and g.n_edges == 3 * 512 and g.n_faces == 3 * 512 and g.n_cells == 512
    assert g.h == 1 / 8


def test_constant_volume(flat_matrix):
    f = constant_field(flat_matrix, 8)
    assert total_volume(f) == pytest.approx(np.sqrt(np.linalg.det(flat_matrix)), rel=1e-14)


def test_integrate_constant_and_lp():
    f = constant_field(np.diag([1.0, 4.0, 9.0]), 8)
    assert integrate(np.full((8, 8, 8), 2.0), f) == pytest.approx(12.0)
    assert lp_norm(np.full((8, 8, 8), -2.0), 2, f) == pytest.approx(np.sqrt(4 * 6))
    assert lp_norm(np.arange(512.0).reshape(8, 8, 8), np.inf, f) == 511.0


def test_flat_curvature_vanishes(flat_matrix):
    f = constant_field(flat_matrix, 8)
    assert np.abs(christoffel(f)).max() == 0.0
    assert np.abs(scalar_curvature(f).R).max() == 0.0


def test_curvature_matches_symbolic_with_second_order_error():
    metric = FAMILY.scaled(0.2)
    gam_fn, R_fn = _symbolic_curvature(metric)
    errs = []
    for N in (16, 32):
        field = sample_metric(metric, N)
        x = field.grid.coordinates()
        R_exact = R_fn(x[..., 0], x[..., 1], x[..., 2])
        errs.append(np.abs(scalar_curvature(field).R - R_exact).max())
        gam = gam_fn(x)
        assert np.abs(christoffel(field) - gam).max() < 0.2 * (16 / N) ** 2
    assert errs[1] < 0.3 * errs[0]  # ratio 1/4 expected for a second-order scheme


def test_conformal_curvature_changes_sign():
    R = scalar_curvature(sample_metric(FAMILY.scaled(0.1), 16)).R
    assert R.min() < 0 < R.max()


def test_rejects_non_spd():
    with pytest.raises(MetricError):
        constant_field(np.diag([1.0, 1.0, -1.0]), 4)
    with pytest.raises(MetricError):
        constant_field(np.diag([1.0, 1.0, 1e-8]), 4)
    with pytest.raises(MetricError):
        constant_field([[1, 0.5, 0], [0, 1, 0], [0, 0, 1]], 4)


def test_shape_check():
    with pytest.raises(ShapeError):
        MetricField(build_grid(4), np.zeros((4, 4, 3, 3, 3)))


def test_spec_round_trip():
    specs = [
        {"kind": "constant", "matrix": [1, 0, 0, 0, 2, 0, 0, 0, 3]},
        {"kind": "conformal", "base": [1, 0, 0, 0, 1, 0, 0, 0, 1],
         "fourier": [{"amplitude": 0.1, "wave": [1, 0, 0], "phase": 0.5}]},
        {"kind": "direct_fourier", "base": [2, 0, 0, 0, 2, 0, 0, 0, 2],
         "components": [{"index": [0, 1], "fourier": [{"amplitude": 0.1, "wave": [0, 0, 1]}]}]},
    ]
    for s in specs:
        m = metric_from_spec(s)
        again = metric_from_spec(m.to_dict())
        x = build_grid(4).coordinates()
        assert np.array_equal(m(x), again(x))
    with pytest.raises(MetricError):
        metric_from_spec({"kind": "voxels"})
    with pytest.raises(MetricError):
        metric_from_spec({"kind": "conformal", "fourier": [{"amplitude": 1, "wave": [0.5, 0, 0]}]})


def test_direct_fourier_symmetric():
    m = DirectFourierMetric(tuple(np.eye(3).ravel() * 2), ((0, 2, (FourierTerm(0.3, (1, 1, 0)),)),))
    G = m(build_grid(4).coordinates())
    assert np.array_equal(G, np.swapaxes(G, -1, -2))
    assert np.abs(G[..., 0, 2]).max() == pytest.approx(0.3)
