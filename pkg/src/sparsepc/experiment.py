"""End-to-end SPDE experiment: sample, solve, recover, compare.

Configuration is a JSON document::

    {
      "field": {"mean": 0.1, "sigma": 0.03, "correlation_length": 0.5, "d": 4,
                "m_quad": 200},
      "mesh": {"n_elements": 64},
      "forcing": 1.0,
      "eval_point": 0.5,
      "schedule": [{"n": 50, "p": 3}, {"n": 150, "p": 3}, {"n": 400, "p": 3}],
      "seeds": [1, 2],
      "solvers": ["omp", "bpdn"],
      "crossval": {"replications": 4, "grid_size": 12,
                   "grid_span": [0.001, 1.0], "fraction": 0.75},
      "reference": {"type": "tensor_quadrature", "q_per_dim": 7},
      "cache_dir": null
    }

A schedule entry ``{"n": N, "p": p, "extra": k}`` uses every basis function
of total order ``<= p`` plus the first ``k`` of order ``p + 1``; ``"nu"``
optionally caps the number of active variables.  ``reference`` may also be
``{"type": "file", "path": "coeffs.csv"}`` or ``null``.

Report columns (``report.csv``) are listed in :data:`REPORT_COLUMNS`.
Wall-clock times go to ``timings.csv`` so that the report itself is
reproducible byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import threading
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import crossval as cv
from .femsolver import Mesh1D, NonPositiveCoefficientError, eval_solution, solve_quadrature_values
from .klfield import KLExpansion, build_field, positivity_margin
from .oracle import (CoefficientVector, load_coefficients, mc_coeffs, mc_statistics, project,
                     rms_error, save_coefficients, statistics, tensor_grid)
from .pcbasis import (BasisSpec, cardinality, prefix_truncate, restricted_set, total_order_set)
from .sampling import (assemble_measurement, coherence_tail_bound, draw_samples,
                       mutual_coherence, sparsity_budget)
from .solvers import recover

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["seed", "n", "p", "extra", "P", "solver", "chosen_delta", "mean", "std_dev",
                  "rel_err_mean", "rel_err_std", "rel_rms_err", "status"]
DIAGNOSE_COLUMNS = ["seed", "n", "p", "extra", "P", "mu", "bound_r", "bound_mu",
                    "bound_prob", "bound_applicable", "s_max_ell1", "s_max_ell0"]
SOLVERS = ("omp", "bpdn")
# statuses that mean a row carries no result; anything else is informational
# (e.g. delta below the least-squares floor still yields the best-fit solution)
FAILED_STATUSES = ("numerical failure", "forward solve failed")


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class FieldConfig:
    mean: float
    sigma: float
    correlation_length: float
    d: int
    m_quad: int = 200


@dataclass(frozen=True)
class ScheduleEntry:
    n: int
    p: int
    extra: int = 0
    nu: Optional[int] = None


@dataclass(frozen=True)
class CrossValConfig:
    replications: int = 4
    grid_size: int = 12
    grid_span: tuple = (1e-3, 1.0)
    fraction: float = 0.75


@dataclass(frozen=True)
class ExperimentConfig:
    field: FieldConfig
    schedule: tuple
    n_elements: int = 64
    forcing: float = 1.0
    eval_point: float = 0.5
    seeds: tuple = (1, 2)
    solvers: tuple = SOLVERS
    crossval: CrossValConfig = CrossValConfig()
    reference: Optional[dict] = None
    cache_dir: Optional[str] = None
    zeta: float = 2.0

    def __post_init__(self):
        f = self.field
        if f.d < 1 or f.m_quad < f.d:
            raise ConfigError("field: need 1 <= d <= m_quad")
        if f.correlation_length <= 0 or f.sigma < 0:
            raise ConfigError("field: need correlation_length > 0 and sigma >= 0")
        if self.n_elements < 1:
            raise ConfigError("mesh: n_elements must be positive")
        if not 0.0 <= self.eval_point <= 1.0:
            raise ConfigError("eval_point must lie in [0, 1]")
        if not self.schedule:
            raise ConfigError("schedule is empty")
        ns = [e.n for e in self.schedule]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("schedule sample sizes must be strictly increasing")
        if ns[0] < 4:
            raise ConfigError("need at least 4 samples for cross-validation")
        for e in self.schedule:
            if e.p < 0 or e.extra < 0:
                raise ConfigError("schedule: p and extra must be non-negative")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        bad = set(self.solvers) - set(SOLVERS)
        if bad:
            raise ConfigError(f"unknown solvers {sorted(bad)}")
        if self.reference is not None and self.reference.get("type") not in (
                "tensor_quadrature", "file"):
            raise ConfigError("reference type must be 'tensor_quadrature' or 'file'")

    @property
    def max_n(self) -> int:
        return self.schedule[-1].n

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            fd = data["field"]
            fieldc = FieldConfig(float(fd["mean"]), float(fd["sigma"]),
                                 float(fd["correlation_length"]), int(fd["d"]),
                                 int(fd.get("m_quad", 200)))
            sched = tuple(ScheduleEntry(int(e["n"]), int(e["p"]), int(e.get("extra", 0)),
                                        None if e.get("nu") is None else int(e["nu"]))
                          for e in data["schedule"])
            cvd = data.get("crossval", {})
            cvc = CrossValConfig(int(cvd.get("replications", 4)), int(cvd.get("grid_size", 12)),
                                 tuple(float(v) for v in cvd.get("grid_span", (1e-3, 1.0))),
                                 float(cvd.get("fraction", 0.75)))
            return cls(
                field=fieldc, schedule=sched,
                n_elements=int(data.get("mesh", {}).get("n_elements", 64)),
                forcing=float(data.get("forcing", 1.0)),
                eval_point=float(data.get("eval_point", 0.5)),
                seeds=tuple(int(s) for s in data.get("seeds", (1, 2))),
                solvers=tuple(data.get("solvers", SOLVERS)),
                crossval=cvc,
                reference=data.get("reference"),
                cache_dir=data.get("cache_dir"),
                zeta=float(data.get("zeta", 2.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid experiment config: {exc!r}") from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mesh"] = {"n_elements": out.pop("n_elements")}
        out["schedule"] = [asdict(e) for e in self.schedule]
        out["crossval"]["grid_span"] = list(self.crossval.grid_span)
        out["seeds"] = list(self.seeds)
        out["solvers"] = list(self.solvers)
        return out

    def with_seeds(self, seeds) -> "ExperimentConfig":
        d = self.to_dict()
        d["seeds"] = list(seeds)
        return ExperimentConfig.from_dict(d)


def schedule_basis(entry: ScheduleEntry, d: int) -> BasisSpec:
    if entry.extra == 0:
        return restricted_set(entry.p, entry.nu if entry.nu is not None else d, d)
    full = restricted_set(entry.p + 1, entry.nu if entry.nu is not None else d, d)
    return prefix_truncate(full, entry.p, entry.extra)


# --- forward model ---------------------------------------------------------

class ForwardModel:
    """``y -> u(x*, y)``: KL coefficient, quadratic FEM, point evaluation."""

    def __init__(self, config: ExperimentConfig):
        f = config.field
        self.config = config
        self.kl: KLExpansion = build_field(f.mean, f.sigma, f.correlation_length, f.d, f.m_quad)
        self.mesh = Mesh1D(config.n_elements)
        xq = self.mesh.quadrature_points
        # (ne, 3, d) mode shapes at the Gauss points
        self._modes = self.kl.eigenfunctions(xq) * np.sqrt(self.kl.eigenvalues)
        self.margin = positivity_margin(self.kl)

    @property
    def key(self) -> str:
        c = self.config
        payload = json.dumps({"field": asdict(c.field), "n_elements": c.n_elements,
                              "forcing": c.forcing, "x": c.eval_point}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def __call__(self, y) -> float:
        y = np.asarray(y, dtype=float)
        a_q = self.kl.mean_bar_a + self.kl.sigma_a * (self._modes @ y)
        sol = solve_quadrature_values(a_q, self.config.forcing, self.mesh)
        return eval_solution(sol, self.config.eval_point)

    def safe(self, y) -> float:
        """Like calling the model, but NaN when the coefficient is not positive."""
        try:
            return self(y)
        except (NonPositiveCoefficientError, np.linalg.LinAlgError) as exc:
            log.warning("forward solve failed: %s", exc)
            return math.nan

    def batch(self, Y, threads: int = 1) -> np.ndarray:
        Y = np.atleast_2d(Y)
        if threads > 1 and len(Y) > 1:
            with ThreadPoolExecutor(threads) as pool:
                return np.array(list(pool.map(self.safe, Y)))
        return np.array([self.safe(y) for y in Y])


class ForwardCache:
    """Forward values for nested sample prefixes, keyed by ``(seed, index)``.

    ``solves`` counts actual forward-model evaluations.  With a ``directory``
    the values are persisted per model hash and seed, so reruns skip them.
    """

    def __init__(self, model: ForwardModel, directory=None, threads: int = 1):
        self.model = model
        self.threads = threads
        self.directory = None if directory is None else Path(directory) / model.key
        self.solves = 0
        self._values: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def _path(self, seed: int) -> Path:
        return self.directory / f"seed_{seed}.npy"

    def _load(self, seed: int) -> np.ndarray:
        if seed not in self._values:
            vals = np.empty(0)
            if self.directory is not None and self._path(seed).exists():
                vals = np.load(self._path(seed))
            self._values[seed] = vals
        return self._values[seed]

    def values(self, seed: int, n: int) -> np.ndarray:
        with self._lock:
            have = self._load(seed)
            if len(have) < n:
                new = draw_samples(self.model.config.field.d, n - len(have), seed,
                                   start=len(have))
                fresh = self.model.batch(new.points, self.threads)
                self.solves += len(fresh)
                have = np.concatenate([have, fresh])
                self._values[seed] = have
                if self.directory is not None:
                    self.directory.mkdir(parents=True, exist_ok=True)
                    np.save(self._path(seed), have)
            return have[:n].copy()


# --- reference ---------------------------------------------------------------

@dataclass
class Reference:
    coefficients: Optional[CoefficientVector]
    mean: float = math.nan
    std_dev: float = math.nan
    solves: int = 0
    note: str = ""


def build_reference(config: ExperimentConfig, model: ForwardModel,
                    threads: int = 1) -> Reference:
    spec = config.reference
    if spec is None:
        return Reference(None, note="no reference configured")
    if spec["type"] == "file":
        try:
            c = load_coefficients(spec["path"])
        except (OSError, ValueError, KeyError) as exc:
            return Reference(None, note=f"reference unavailable: {exc}")
        mean, std = statistics(c)
        return Reference(c, mean, std)
    d = config.field.d
    q = int(spec.get("q_per_dim", 7))
    top = max(e.p + (1 if e.extra else 0) for e in config.schedule)
    basis = total_order_set(top, d)
    try:
        nodes, weights = tensor_grid(d, q)
    except ValueError as exc:
        return Reference(None, note=f"reference unavailable: {exc}")
    u = model.batch(nodes, threads)
    if not np.all(np.isfinite(u)):
        return Reference(None, solves=len(u), note="reference unavailable: forward solves failed")
    c = project(u, weights, nodes, basis)
    mean = float(weights @ u)
    std = float(math.sqrt(max(weights @ (u - mean) ** 2, 0.0)))
    return Reference(c, mean, std, len(u))


# --- experiment --------------------------------------------------------------

def _rel(value: float, ref: float) -> float:
    if not math.isfinite(ref):
        return math.nan
    # a zero reference (e.g. sigma = 0 gives std 0) falls back to the absolute error
    return abs(value - ref) / abs(ref) if ref != 0 else abs(value - ref)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    coefficients: dict = field(default_factory=dict)
    solves_per_seed: dict = field(default_factory=dict)
    reference: Optional[Reference] = None
    positivity_margin: float = math.nan
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(r["status"].startswith(FAILED_STATUSES) for r in self.rows)

    def select(self, **conds) -> list:
        return [r for r in self.rows if all(r[k] == v for k, v in conds.items())]

    def summary(self) -> dict:
        ref = self.reference
        return {
            "config": self.config.to_dict(),
            "columns": REPORT_COLUMNS,
            "positivity_margin": self.positivity_margin,
            "reference": None if ref is None else {
                "mean": ref.mean, "std_dev": ref.std_dev, "solves": ref.solves,
                "size": None if ref.coefficients is None else len(ref.coefficients),
                "note": ref.note},
            "forward_solves_per_seed": {str(k): v for k, v in self.solves_per_seed.items()},
            "warnings": self.warnings,
            "all_ok": self.ok,
        }

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "report.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r[k]) for k in REPORT_COLUMNS})
        with (out / "timings.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "n", "solver", "runtime_s"])
            w.writerows(self.timings)
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        curves = out / "curves"
        curves.mkdir(exist_ok=True)
        for (seed, n, solver), res in sorted(self.curves.items()):
            cv.export_curve(res, curves / f"seed{seed}_n{n}_{solver}.csv")
        coeffs = out / "coefficients"
        coeffs.mkdir(exist_ok=True)
        for (seed, n, solver), c in sorted(self.coefficients.items()):
            save_coefficients(c, coeffs / f"seed{seed}_n{n}_{solver}.csv")
        if self.reference is not None and self.reference.coefficients is not None:
            save_coefficients(self.reference.coefficients, out / "reference.csv")
        return out


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def run_experiment(config: ExperimentConfig, threads: int = 1,
                   model: Optional[ForwardModel] = None) -> ExperimentReport:
    model = model or ForwardModel(config)
    report = ExperimentReport(config, positivity_margin=model.margin)
    if model.margin <= 0:
        msg = (f"positivity margin {model.margin:.3g} <= 0: some samples may give a "
               "non-positive coefficient")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        report.warnings.append(msg)
    ref = build_reference(config, model, threads)
    report.reference = ref
    if ref.note:
        report.warnings.append(ref.note)

    d = config.field.d
    cache = ForwardCache(model, config.cache_dir, threads)
    for seed in config.seeds:
        before = cache.solves
        samples_all = draw_samples(d, config.max_n, seed)
        for entry in config.schedule:
            basis = schedule_basis(entry, d)
            samples = samples_all.head(entry.n)
            u = cache.values(seed, entry.n)
            base = {"seed": seed, "n": entry.n, "p": entry.p, "extra": entry.extra,
                    "P": len(basis)}
            if not np.all(np.isfinite(u)):
                for solver in (*config.solvers, "mc"):
                    report.rows.append(_failed_row(base, solver, "forward solve failed"))
                continue
            M = assemble_measurement(basis, samples)
            for solver in config.solvers:
                t0 = time.perf_counter()
                row = _solver_row(base, solver, M, u, config, seed, ref, report, threads)
                report.rows.append(row)
                report.timings.append([seed, entry.n, solver,
                                       f"{time.perf_counter() - t0:.4f}"])
            t0 = time.perf_counter()
            c = mc_coeffs(samples, u, basis)
            mean, std = mc_statistics(u)
            report.coefficients[(seed, entry.n, "mc")] = c
            report.rows.append(_stats_row(base, "mc", math.nan, mean, std, c, ref, "ok"))
            report.timings.append([seed, entry.n, "mc", f"{time.perf_counter() - t0:.4f}"])
        report.solves_per_seed[seed] = cache.solves - before
    return report


def _solver_row(base, solver, M, u, config, seed, ref, report, threads):
    cvc = config.crossval
    try:
        plan = cv.CrossValPlan.default(len(u), u, cvc.replications, seed, cvc.grid_size,
                                       cvc.grid_span, cvc.fraction)
        res, curve = cv.cross_validated_recovery(M, u, solver, plan, threads=threads)
    except (cv.CrossValidationError, np.linalg.LinAlgError, ValueError,
            ArithmeticError) as exc:
        return _failed_row(base, solver, f"numerical failure: {exc}")
    report.curves[(seed, base["n"], solver)] = curve
    c = CoefficientVector(M.basis, res.coefficients)
    report.coefficients[(seed, base["n"], solver)] = c
    mean, std = statistics(c)
    return _stats_row(base, solver, curve.chosen_delta, mean, std, c, ref, res.status)


def _stats_row(base, solver, delta, mean, std, c, ref, status):
    rms = math.nan
    if ref.coefficients is not None:
        rms = rms_error(c, ref.coefficients, relative=True)
    return {**base, "solver": solver, "chosen_delta": float(delta), "mean": float(mean),
            "std_dev": float(std), "rel_err_mean": _rel(mean, ref.mean),
            "rel_err_std": _rel(std, ref.std_dev), "rel_rms_err": float(rms), "status": status}


def _failed_row(base, solver, status):
    return {**base, "solver": solver, "chosen_delta": math.nan, "mean": math.nan,
            "std_dev": math.nan, "rel_err_mean": math.nan, "rel_err_std": math.nan,
            "rel_rms_err": math.nan, "status": status}


# --- diagnostics -------------------------------------------------------------

def diagnose(config: ExperimentConfig) -> tuple[list, list]:
    """Coherence and sparsity-budget table; returns ``(rows, median_rows)``.

    The concentration bound and ``S_max`` use the highest total order present
    in each basis.
    """
    d = config.field.d
    rows = []
    for seed in config.seeds:
        pts = draw_samples(d, config.max_n, seed)
        for e in config.schedule:
            basis = schedule_basis(e, d)
            order = e.p + (1 if e.extra else 0)
            mu = mutual_coherence(assemble_measurement(basis, pts.head(e.n)))
            row = {"seed": seed, "n": e.n, "p": e.p, "extra": e.extra, "P": len(basis),
                   "mu": mu}
            if cardinality(order, d) > 1:
                b = coherence_tail_bound(e.n, order, d, config.zeta)
                row.update(bound_r=b.r, bound_mu=b.mu_threshold, bound_prob=b.prob_bound,
                           bound_applicable=b.applicable,
                           s_max_ell1=sparsity_budget(e.n, order, d, "ell1"),
                           s_max_ell0=sparsity_budget(e.n, order, d, "ell0"))
            else:
                row.update(bound_r=math.nan, bound_mu=math.nan, bound_prob=math.nan,
                           bound_applicable=False, s_max_ell1=math.nan, s_max_ell0=math.nan)
            rows.append(row)
    medians = []
    for e in config.schedule:
        mus = [r["mu"] for r in rows if r["n"] == e.n and r["p"] == e.p
               and r["extra"] == e.extra]
        medians.append({"n": e.n, "p": e.p, "extra": e.extra,
                        "median_mu": float(np.median(mus)), "seeds": len(mus)})
    return rows, medians


def write_diagnose(rows, medians, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "diagnose.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DIAGNOSE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in DIAGNOSE_COLUMNS})
    with (out / "diagnose_median.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["n", "p", "extra", "median_mu", "seeds"])
        w.writeheader()
        for r in medians:
            w.writerow({k: _fmt(v) for k, v in r.items()})
