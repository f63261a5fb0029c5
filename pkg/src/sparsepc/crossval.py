"""Choosing the truncation tolerance by reconstruction/validation splits.

For each candidate ``delta_r`` the expansion is recovered from a random
``N_r``-subset of the samples and scored by its residual on the remaining
``N - N_r``.  The score is averaged over a few random partitions, the best
``delta_r`` is kept and rescaled to the full sample size by ``sqrt(N / N_r)``.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .pcbasis import BasisSpec
from .sampling import MeasurementMatrix, SampleSet, assemble_measurement, matrix_from_array
from .solvers import recover

log = logging.getLogger(__name__)


class CrossValidationError(RuntimeError):
    """Every candidate tolerance failed."""


@dataclass(frozen=True)
class CrossValPlan:
    n_total: int
    n_reconstruction: int
    replications: int = 4
    delta_grid: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.n_reconstruction < self.n_total:
            raise ValueError(
                f"need 0 < n_reconstruction < n_total, got {self.n_reconstruction} "
                f"and {self.n_total}")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        grid = tuple(sorted(float(g) for g in self.delta_grid))
        if any(g <= 0 or not math.isfinite(g) for g in grid):
            raise ValueError("grid values must be positive and finite")
        object.__setattr__(self, "delta_grid", grid)

    @classmethod
    def default(cls, n_total: int, values=None, replications: int = 4, seed: int = 0,
                grid_size: int = 12, grid_span: tuple[float, float] = (1e-3, 1.0),
                fraction: float = 0.75) -> "CrossValPlan":
        """``N_r = floor(fraction * N)`` and, if ``values`` are given, a log grid
        over ``grid_span`` times the expected reconstruction-set norm."""
        n_r = int(math.floor(fraction * n_total))
        grid: tuple = ()
        if values is not None:
            grid = tuple(default_grid(values, n_r, grid_size, grid_span))
        return cls(n_total, n_r, replications, grid, seed)


def default_grid(values, n_reconstruction: int, size: int = 12,
                 span: tuple[float, float] = (1e-3, 1.0)) -> np.ndarray:
    """Log-spaced candidates between ``span[0]`` and ``span[1]`` times
    ``||u|| sqrt(N_r / N)``, the typical norm of a reconstruction subset."""
    u = np.asarray(values, dtype=float).ravel()
    scale = float(np.linalg.norm(u)) * math.sqrt(n_reconstruction / u.size)
    if scale == 0:
        scale = 1.0
    return scale * np.logspace(math.log10(span[0]), math.log10(span[1]), size)


@dataclass(frozen=True)
class CrossValResult:
    chosen_delta: float
    delta_r_hat: float
    grid: np.ndarray
    validation_curve: np.ndarray  # replication mean; NaN where every solve failed
    per_replication: np.ndarray  # (grid, replications), NaN marks a failed solve
    n_total: int
    n_reconstruction: int
    solver: str = ""
    notes: list = field(default_factory=list)


def split(samples, values, plan: CrossValPlan, replication: int):
    """Deterministic partition for ``(plan.seed, replication)``.

    Returns ``((y_r, u_r, idx_r), (y_v, u_v, idx_v))`` where ``idx`` are
    positions in the original sample ordering.
    """
    if not 0 <= replication < plan.replications:
        raise ValueError(f"replication {replication} not in [0, {plan.replications})")
    points = samples.points if isinstance(samples, SampleSet) else np.asarray(samples)
    values = np.asarray(values, dtype=float).ravel()
    n = points.shape[0]
    if n != plan.n_total or values.size != n:
        raise ValueError(f"plan expects {plan.n_total} samples, got {n} points, "
                         f"{values.size} values")
    idx_r, idx_v = _partition(plan, replication)
    return ((points[idx_r], values[idx_r], idx_r), (points[idx_v], values[idx_v], idx_v))


def _partition(plan: CrossValPlan, replication: int):
    perm = np.random.default_rng([plan.seed, replication]).permutation(plan.n_total)
    return np.sort(perm[:plan.n_reconstruction]), np.sort(perm[plan.n_reconstruction:])


def estimate_delta(samples, values, basis: Optional[BasisSpec], solver: str,
                   plan: CrossValPlan, matrix: Optional[MeasurementMatrix] = None,
                   threads: int = 1, **solver_kwargs) -> CrossValResult:
    """Cross-validated ``delta`` for ``solver`` ("omp" or "bpdn").

    ``matrix`` may carry the already assembled ``N x P`` measurement matrix;
    otherwise it is built from ``samples`` and ``basis``.
    """
    u = np.asarray(values, dtype=float).ravel()
    if matrix is None:
        if not isinstance(samples, SampleSet):
            raise TypeError("pass a SampleSet or a precomputed measurement matrix")
        matrix = assemble_measurement(basis, samples)
    A = matrix.values if isinstance(matrix, MeasurementMatrix) else np.asarray(matrix)
    if A.shape[0] != plan.n_total or u.size != plan.n_total:
        raise ValueError(f"plan expects {plan.n_total} samples, got matrix {A.shape}, "
                         f"{u.size} values")
    grid = np.array(plan.delta_grid) if plan.delta_grid else default_grid(u, plan.n_reconstruction)
    grid = np.sort(grid)
    parts = [_partition(plan, k) for k in range(plan.replications)]

    def score(job):
        i, k = job
        idx_r, idx_v = parts[k]
        try:
            res = recover(matrix_from_array(A[idx_r]), u[idx_r], float(grid[i]), solver,
                          **solver_kwargs)
            c = res.coefficients
            if not np.all(np.isfinite(c)):
                return math.nan
            return float(np.linalg.norm(A[idx_v] @ c - u[idx_v]))
        except (np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
            log.debug("solve at delta_r=%g, replication %d failed: %s", grid[i], k, exc)
            return math.nan

    jobs = [(i, k) for i in range(len(grid)) for k in range(plan.replications)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            scores = list(pool.map(score, jobs))
    else:
        scores = [score(j) for j in jobs]
    per_rep = np.array(scores).reshape(len(grid), plan.replications)

    ok = ~np.all(np.isnan(per_rep), axis=1)
    if not ok.any():
        raise CrossValidationError(f"{solver}: every solve failed on the whole grid")
    curve = np.full(len(grid), np.nan)
    curve[ok] = np.nanmean(per_rep[ok], axis=1)
    notes = []
    if not ok.all():
        notes.append(f"{int((~ok).sum())} grid points excluded (all solves failed)")
    # first minimum on the ascending grid: ties go to the smaller delta_r
    best = int(np.flatnonzero(ok)[np.argmin(curve[ok])])
    d_hat = float(grid[best])
    chosen = math.sqrt(plan.n_total / plan.n_reconstruction) * d_hat
    return CrossValResult(chosen, d_hat, grid, curve, per_rep, plan.n_total,
                          plan.n_reconstruction, solver, notes)


def is_u_shaped(result: CrossValResult) -> bool:
    """Both grid ends score worse than the selected point."""
    c = result.validation_curve
    valid = np.flatnonzero(~np.isnan(c))
    best = c[np.searchsorted(result.grid, result.delta_r_hat)]
    return bool(c[valid[0]] > best and c[valid[-1]] > best)


def export_curve(result: CrossValResult, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        reps = result.per_replication.shape[1]
        w.writerow(["delta_r", "mean_delta_v"] + [f"rep_{k}" for k in range(reps)])
        for g, m, row in zip(result.grid, result.validation_curve, result.per_replication):
            w.writerow([repr(float(g)), repr(float(m))] + [repr(float(v)) for v in row])


def load_curve(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2:]


def cross_validated_recovery(matrix: MeasurementMatrix, values, solver: str, plan: CrossValPlan,
                             threads: int = 1, **solver_kwargs):
    """Pick ``delta`` by cross-validation, then solve once with all samples."""
    cv = estimate_delta(None, values, matrix.basis, solver, plan, matrix=matrix,
                        threads=threads, **solver_kwargs)
    res = recover(matrix, values, cv.chosen_delta, solver, **solver_kwargs)
    return res, cv

