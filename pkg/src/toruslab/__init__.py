"""Discrete harmonic maps to flat tori and the convergence diagnostics built on them."""
from .errors import TorusLabError
from .mesh import MetricField, PeriodicGrid, build_grid, constant_field, metric_from_spec, sample_metric
from .hodge import dual_gram, gram_matrix, harmonic_representative, standard_basis
from .lattice import reduced_basis, successive_minima
from .harmap import HarmonicTorusMap, build_map, stern_report
from .cover import covering_constant, cube_domain, dirichlet_domain
from .approx import constant_approx, extract_omega, pointwise_gram, recover_flat
from .convergence import SweepParams, sweep
from .pipeline import Run, RunConfig, config_from_dict, load_config
from .report import Verdict

__version__ = "0.1.0"

__all__ = [
    "HarmonicTorusMap", "MetricField", "PeriodicGrid", "Run", "RunConfig", "SweepParams", "TorusLabError",
    "Verdict", "build_grid", "build_map", "config_from_dict", "constant_approx", "constant_field",
    "covering_constant", "cube_domain", "dirichlet_domain", "dual_gram", "extract_omega", "gram_matrix",
    "harmonic_representative", "load_config", "metric_from_spec", "pointwise_gram", "recover_flat",
    "reduced_basis", "sample_metric", "standard_basis", "stern_report", "successive_minima", "sweep",
]
