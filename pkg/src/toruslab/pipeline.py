"""Run configuration and the staged pipeline behind the command line."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import approx as ax
from . import convergence as cv
from . import cover, harmap, hodge, lattice
from .errors import ConfigError, TorusLabError
from .report import Verdict
from .mesh import MetricField, metric_from_spec, sample_metric, total_volume

STAGES = ("hodge", "lattice", "map", "cover", "omega", "sweep")


@dataclass(frozen=True)
class RunConfig:
    N: int = 16
    metric: dict = dc_field(default_factory=lambda: {"kind": "constant", "matrix": [1, 0, 0, 0, 1, 0, 0, 0, 1]})
    sigma: float = 1.0
    Lambda: float = 4.0
    eta: float = 0.1
    volume_cap: float = 10.0
    rneg_cap: float = 10.0
    kappa_cap: int = 64
    tol: float = hodge.DEFAULT_TOL
    max_iter: int | None = None
    eps: tuple = ()
    sweep_grid: int | None = None
    samples: int = 64
    injectivity_samples: int = 256
    disc_slack: float = 0.0
    seed: int = 0
    workers: int = 1

    def validate(self) -> "RunConfig":
        if self.N < 4:
            raise ConfigError(f"grid: N must be >= 4, got {self.N}")
        for name in ("sigma", "Lambda", "eta", "volume_cap", "rneg_cap", "kappa_cap", "tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)!r}")
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ConfigError(f"sweep.eps: must be strictly decreasing, got {list(self.eps)}")
        if any(e < 0 for e in self.eps):
            raise ConfigError("sweep.eps: values must be non-negative")
        if self.samples < 1 or self.injectivity_samples < 1:
            raise ConfigError("samples: must be positive")
        try:
            metric_from_spec(self.metric)
        except (KeyError, TypeError, ValueError, TorusLabError) as exc:
            raise ConfigError(f"metric: {exc}") from None
        return self


_FIELDS = {
    "grid": "N", "sigma": "sigma", "Lambda": "Lambda", "eta": "eta", "volume_cap": "volume_cap",
    "rneg_cap": "rneg_cap", "kappa_cap": "kappa_cap", "samples": "samples",
    "injectivity_samples": "injectivity_samples", "disc_slack": "disc_slack", "seed": "seed",
}


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config: top level must be a JSON object")
    known = set(_FIELDS) | {"metric", "params", "solver", "sweep"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"config: unknown field(s) {unknown}")
    kw = {}
    flat = dict(d)
    flat.update(d.get("params", {}))
    for key, attr in _FIELDS.items():
        if key in flat:
            kw[attr] = flat[key]
    if "metric" in d:
        kw["metric"] = d["metric"]
    solver = d.get("solver", {})
    if "tol" in solver:
        kw["tol"] = solver["tol"]
    if "max_iter" in solver:
        kw["max_iter"] = solver["max_iter"]
    sweep = d.get("sweep", {})
    if "eps" in sweep:
        kw["eps"] = tuple(float(e) for e in sweep["eps"])
    if "grid" in sweep:
        kw["sweep_grid"] = int(sweep["grid"])
    try:
        for k in ("N", "kappa_cap", "samples", "injectivity_samples", "seed"):
            if k in kw:
                v = kw[k]
                if isinstance(v, bool) or int(v) != v:
                    raise ConfigError(f"{k}: must be an integer, got {v!r}")
                kw[k] = int(v)
        for k in ("sigma", "Lambda", "eta", "volume_cap", "rneg_cap", "tol", "disc_slack"):
            if k in kw:
                kw[k] = float(kw[k])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: {exc}") from None
    return RunConfig(**kw).validate()


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return config_from_dict(data)


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw).validate() if kw else cfg


# --------------------------------------------------------------------------
# staged pipeline


class Run:
    """Lazily evaluated stages sharing one metric field."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.field: MetricField = sample_metric(cfg.metric, cfg.N)
        self.verdicts: list = []
        self.report: dict = {"config": _config_block(cfg)}
        self._cache: dict = {}

    def _once(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def _add(self, verdicts):
        self.verdicts.extend(verdicts)

    # stages -----------------------------------------------------------

    def hodge(self):
        def go():
            f, cfg = self.field, self.cfg
            hmap = self.harmonic_map()
            q1 = hodge.gram_matrix(hmap.forms, f)
            q2 = hodge.dual_gram(hmap.forms, f, cfg.tol, cfg.max_iter)
            residual = max(fm.residual for fm in hmap.forms)
            self.report["hodge"] = {
                "gram_h1_standard": hmap.gram,
                "gram_h1": q1.matrix, "gram_h2": q2.matrix,
                "det_h1": q1.det, "det_h2": q2.det, "det_product": q1.det * q2.det,
                "max_codifferential_residual": residual,
                "volume": total_volume(f),
            }
            self._add([Verdict.le("innproduct_on_cohomology[harmonic_residual]", residual, max(cfg.tol, 1e-9))])
            return q1, q2
        return self._once("hodge", go)

    def harmonic_map(self):
        return self._once("hmap", lambda: harmap.build_map(self.field, self.cfg.tol, self.cfg.workers))

    def lattice(self):
        def go():
            q1, q2 = self.hodge()
            V = total_volume(self.field)
            checks = lattice.minkowski_and_dual_checks(q1.matrix, q2.matrix, self.cfg.sigma, V)
            rb = lattice.reduced_basis(q1.matrix)
            self.report["lattice"] = {
                "minima_h1": checks.minima_h1, "minima_h2": checks.minima_h2,
                "reduced_basis_norms": checks.basis_norms, "det_product": checks.det_product,
                "systole_bound_1": lattice.systole_bound(q2.matrix, V),
                "systole_bound_2": lattice.systole_bound(q1.matrix, V),
                "reduced_basis": rb.B, "unimodular": rb.unimodular,
            }
            self._add(checks.verdicts)
            return checks
        return self._once("lattice", go)

    def map(self):
        def go():
            f, cfg = self.field, self.cfg
            hmap = self.harmonic_map()
            stern = harmap.stern_report(hmap, f, cfg.disc_slack)
            self.report["map"] = {
                "basis_transform": hmap.basis_transform, "orientation": hmap.orientation,
                "degree": hmap.degree, "degree_tolerance": harmap.degree_tolerance(f.N),
                "stern": stern,
            }
            self._add([Verdict.close("L2-bounded_deg-1-harmonic_map[degree]", hmap.degree, 1.0,
                                             harmap.degree_tolerance(f.N))])
            self._add([Verdict.le(f"stern_ineq[u{j + 1}]", stern.deficit[j], stern.rhs[j] + cfg.disc_slack,
                                          tol=1e-8) for j in range(3)])
            return stern
        return self._once("map", go)

    def cover(self, eta: float | None = None):
        eta = self.cfg.eta if eta is None else eta

        def go():
            f, cfg = self.field, self.cfg
            hmap = self.harmonic_map()
            stern = self.map()
            V = total_volume(f)
            domains = {"unit_cube": cover.cube_domain(f.N), "dirichlet": cover.dirichlet_domain(f)}
            block = {"eta": eta, "domains": {}}
            kappas = {}
            nbhds = {}
            for name, dom in domains.items():
                nb = cover.neighbourhood(dom, eta, f)
                nbhds[name] = nb
                kappas[name] = cover.covering_constant(dom, eta, f, nb)
                block["domains"][name] = {"kappa": kappas[name], "checks": dom.checks, "extent": dom.extent()}
                self._add([Verdict.flag(f"fund_domain[{name}]",
                                                all(dom.checks[k] for k in ("covers", "interior_injective",
                                                                            "connected")))])
            kappa = min(kappas.values())
            best = min(kappas, key=lambda k: (kappas[k], k))
            block["kappa"] = kappa
            block["kappa_domain"] = best
            osc = []
            for j, form in enumerate(hmap.forms):
                u = cover.lift(form)
                rep = cover.oscillation_bounds(u, domains[best], eta, kappa, cfg.sigma, f, stern.l2[j],
                                               nbhds[best], V)
                osc.append({"osc_domain": rep.osc_domain, "osc_neighbourhood": rep.osc_neighbourhood,
                            "bound_domain": rep.bound_domain, "bound_neighbourhood": rep.bound_neighbourhood})
                self._add([Verdict.le(f"{v.anchor}[u{j + 1}]", v.lhs, v.rhs, tol=1e-9) for v in rep.verdicts])
            block["oscillation"] = osc
            l3 = harmap.l3_inequality_check(hmap, f, cfg.sigma, eta, kappa, V, stern.rneg_l2)
            block["l3"] = [{"lhs": v.lhs, "rhs": v.rhs} for v in l3]
            self._add(l3)
            self.report["cover"] = block
            return kappa
        return self._once(("cover", eta), go)

    def omega(self):
        def go():
            f, cfg = self.field, self.cfg
            hmap = self.harmonic_map()
            stern = self.map()
            gram = ax.pointwise_gram(hmap, f)
            capprox = ax.constant_approx(gram, f, cfg.Lambda, hmap, stern.deficit)
            om = ax.extract_omega(gram, capprox, f, cfg.workers)
            diag = ax.omega_diagnostics(om, gram, capprox, f, hmap.degree, stern.rneg_l2)
            inj, _ = ax.injectivity_count(hmap, om.mask, cfg.injectivity_samples, cfg.seed)
            flat = ax.recover_flat(capprox.a, gram, f, om.mask)
            verdicts = list(capprox.verdicts) + list(om.verdicts) + list(diag.pop("verdicts"))
            verdicts.append(Verdict.le("inj_on_well_approximating_set", inj, 1))
            if f.is_constant():
                verdicts.append(Verdict.le("C0_close_to_flat_metric", flat.sup_deficit, 1e-8))
            self._add(verdicts)
            r4 = stern.rneg_l2 ** 0.25
            self.report["omega"] = {
                "a": capprox.a, "tau": capprox.tau, "tau_warning": om.warning, "Lambda": cfg.Lambda,
                "l1_deficit": capprox.l1_deficit, "l1_bound": capprox.l1_bound, "a_bound": capprox.a_bound,
                "t0": om.t0, "omega_volume": om.omega_vol, "complement_volume": om.complement_vol,
                "boundary_area": om.boundary, "sup_deviation": om.sup_deviation, "e1_volume": om.e1_vol,
                "diagnostics": diag, "injectivity_count": inj,
                "g_flat": flat.g_flat, "c0_deficit": flat.sup_deficit,
                "c0_measured_B": flat.sup_deficit / r4 if r4 > 0 else 0.0,
                "slab_cheeger_upper_bound": ax.slab_cheeger_bound(f),
            }
            return om
        return self._once("omega", go)

    def sweep(self):
        def go():
            cfg = self.cfg
            if not cfg.eps:
                self.report["sweep"] = {"rows": []}
                return None
            params = cv.SweepParams(N=cfg.sweep_grid or cfg.N, sigma=cfg.sigma, Lambda=cfg.Lambda, eta=cfg.eta,
                                    volume_cap=cfg.volume_cap, rneg_cap=cfg.rneg_cap, kappa_cap=cfg.kappa_cap,
                                    tol=cfg.tol, samples=cfg.samples, seed=cfg.seed, workers=cfg.workers)
            res = cv.sweep(metric_from_spec(cfg.metric), cfg.eps, params)
            self.report["sweep"] = {
                "columns": cv.SWEEP_COLUMNS,
                "rows": [dict(zip(cv.SWEEP_COLUMNS, r.values()), membership=r.membership, **r.extras)
                         for r in res.rows],
                "rneg_floor": res.rneg_floor,
            }
            self._add(res.verdicts)
            return res
        return self._once("sweep", go)

    @property
    def sweep_result(self):
        return self._cache.get("sweep")

    def run_stages(self, stages=STAGES):
        for s in stages:
            getattr(self, s)()
        return self


def _config_block(cfg: RunConfig) -> dict:
    out = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__ if k != "workers"}
    out["eps"] = list(cfg.eps)
    return out


def dedupe_anchors(verdicts) -> list:
    """Keep the first verdict per anchor string."""
    seen, out = set(), []
    for v in verdicts:
        if v.anchor not in seen:
            seen.add(v.anchor)
            out.append(v)
    return out


def lattice_report(Q) -> dict:
    """Minima and reduced basis of a bare Gram matrix."""
    Q = np.asarray(Q, dtype=float)
    lam, vecs = lattice.successive_minima(Q)
    rb = lattice.reduced_basis(Q)
    n = Q.shape[0]
    prod_bound = lattice.minkowski_constant(n) * math.sqrt(np.linalg.det(Q))
    verdicts = [Verdict.le("lat_minima_det_ineq", float(np.prod(lam)), prod_bound),
                Verdict.le("bounded_lat_basis[b1]", rb.norms[0], lam[0], tol=1e-12)]
    verdicts += [Verdict.le(f"bounded_lat_basis[b{j}]", rb.norms[j - 1], 0.5 * j * lam[j - 1], tol=1e-12)
                 for j in range(2, n + 1)]
    return {"gram": Q, "minima": lam, "minima_vectors": vecs, "reduced_basis": rb.B,
            "reduced_basis_norms": rb.norms, "unimodular": rb.unimodular}, verdicts
