"""Sparse recovery of PC coefficients.

Two solvers for ``min ||W c||_s  s.t.  ||Psi c - u||_2 <= delta``:

* :func:`omp` -- orthogonal matching pursuit for the ``s = 0`` problem.
* :func:`bpdn` -- basis pursuit denoising (``s = 1``), found by Newton root
  finding on the Pareto curve ``tau -> ||r(tau)||_2`` where each point is a
  weighted-l1 LASSO solved by :func:`lasso_spg`.

``W`` is the diagonal of column l2 norms of ``Psi``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .sampling import MeasurementMatrix, matrix_from_array

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when the support columns are (numerically) linearly dependent."""

    def __init__(self, column: int, message: str = ""):
        self.column = column
        super().__init__(message or f"column {column} is linearly dependent on earlier columns")


@dataclass
class RecoveryResult:
    coefficients: np.ndarray
    residual_norm: float
    iterations: int
    solver: str
    delta: float
    converged: bool = True
    status: str = "ok"
    residual_history: list = field(default_factory=list)

    @property
    def support(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.coefficients)]


def _as_matrix(m) -> MeasurementMatrix:
    return m if isinstance(m, MeasurementMatrix) else matrix_from_array(m)


# ---------------------------------------------------------------------------
# least squares


def least_squares(A, b, rtol: float = 1e-10) -> np.ndarray:
    """Least-squares coefficients for the columns of ``A`` (full column rank).

    Raises
    ------
    RankDeficientError
        If a column is within ``rtol`` (relative to its own norm) of the span of
        the preceding ones; ``err.column`` is its position in ``A``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    N, k = A.shape
    if k == 0:
        return np.zeros(0)
    if k > N:
        raise RankDeficientError(N, f"{k} columns but only {N} rows")
    Q, R = np.linalg.qr(A, mode="reduced")
    col_norms = np.linalg.norm(A, axis=0)
    diag = np.abs(np.diag(R))
    bad = np.flatnonzero(diag <= rtol * np.maximum(col_norms, _EPS))
    if bad.size:
        raise RankDeficientError(int(bad[0]))
    return solve_triangular(R, Q.T @ b)


# ---------------------------------------------------------------------------
# OMP


def omp(m, u, delta: float = 0.0, max_support: Optional[int] = None) -> RecoveryResult:
    """Orthogonal matching pursuit.

    At each step the column minimising ``||psi_j a_j - r||_2`` with
    ``a_j = psi_j^T r / ||psi_j||^2`` joins the support (lowest index on exact
    ties), the coefficients are refit by least squares on the support through
    an incrementally updated QR factorization, and the loop stops once
    ``||u - Psi c||_2 <= delta`` or the support reaches ``max_support``
    (default ``min(N - 1, P)``).  Missing the tolerance is reported through
    ``converged=False``, never raised.
    """
    m = _as_matrix(m)
    A = m.values
    u = np.asarray(u, dtype=float)
    N, P = A.shape
    if N < 1:
        raise ValueError("OMP needs at least one sample")
    if u.shape != (N,):
        raise ValueError(f"u has shape {u.shape}, expected ({N},)")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if max_support is None:
        max_support = min(N - 1, P)
    max_support = min(max_support, N, P)

    w = m.column_weights
    w2 = np.where(w > 0, w * w, np.inf)
    available = w > 0

    Q = np.zeros((N, max(max_support, 0)))
    R = np.zeros((max(max_support, 0), max(max_support, 0)))
    z = np.zeros(max(max_support, 0))
    support: list[int] = []
    coef_s = np.zeros(0)
    r = u.copy()
    rnorm = float(np.linalg.norm(r))
    history = [rnorm]
    status = "ok"

    while rnorm > delta and len(support) < max_support:
        corr = A.T @ r
        eps2 = rnorm * rnorm - corr * corr / w2
        eps = np.sqrt(np.maximum(eps2, 0.0))
        eps[~available] = np.inf
        j = int(np.argmin(eps))
        if not np.isfinite(eps[j]) or eps[j] >= rnorm * (1.0 - 1e-14):
            status = "stalled: no column reduces the residual"
            break
        k = len(support)
        # two passes of modified Gram-Schmidt keep Q orthonormal to working precision
        v = A[:, j].copy()
        rcol = np.zeros(k + 1)
        for _ in range(2):
            for i in range(k):
                h = Q[:, i] @ v
                v -= h * Q[:, i]
                rcol[i] += h
        vnorm = np.linalg.norm(v)
        if vnorm <= 1e-10 * w[j]:
            available[j] = False
            continue
        Q[:, k] = v / vnorm
        rcol[k] = vnorm
        R[: k + 1, k] = rcol
        z[k] = Q[:, k] @ u
        support.append(j)
        available[j] = False
        coef_s = solve_triangular(R[: k + 1, : k + 1], z[: k + 1])
        r = u - A[:, support] @ coef_s
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm)

    c = np.zeros(P)
    if support:
        c[support] = coef_s
    converged = rnorm <= delta
    if not converged and status == "ok":
        status = "tolerance not met: support limit reached"
    return RecoveryResult(c, rnorm, len(support), "omp", float(delta), converged, status,
                          history)


# ---------------------------------------------------------------------------
# weighted l1 ball projection


def project_weighted_l1(v, weights, tau: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x : sum_j w_j |x_j| <= tau}``.

    The solution is a weighted soft threshold ``sign(v) max(|v| - theta w, 0)``;
    ``theta`` is located by sorting the ratios ``|v_j| / w_j``.
    """
    v = np.asarray(v, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), v.shape)
    if tau < 0:
        raise ValueError("tau must be non-negative")
    a = np.abs(v)
    if np.dot(w, a) <= tau:
        return v.copy()
    if tau <= 0:
        return np.zeros_like(v)
    ratio = a / w
    order = np.argsort(-ratio, kind="stable")
    wa = np.cumsum((w * a)[order])
    ww = np.cumsum((w * w)[order])
    theta = (wa - tau) / ww
    # largest k whose k-th ratio still reaches the threshold built from the top k;
    # k = 0 always qualifies in exact arithmetic, so fall back to it under rounding
    hits = np.flatnonzero(theta <= ratio[order])
    k = int(hits[-1]) if hits.size else 0
    th = max(theta[k], 0.0)
    return np.sign(v) * np.maximum(a - th * w, 0.0)


# ---------------------------------------------------------------------------
# LASSO via spectral projected gradient


@dataclass
class LassoResult:
    coefficients: np.ndarray
    residual_norm: float
    dual_gap: float
    dual_norm: float
    iterations: int
    converged: bool


def _face_solve(A, u, w, tau, x):
    """Exact minimiser of the LASSO objective on the face of the ball (or the
    interior) picked out by the support and signs of ``x``; ``None`` when the
    face problem is ill-posed or its solution leaves the face."""
    S = np.flatnonzero(x)
    N = A.shape[0]
    if S.size == 0 or S.size > N:
        return None
    As = A[:, S]
    s = np.sign(x[S])
    try:
        Q, R = np.linalg.qr(As, mode="reduced")
        if np.min(np.abs(np.diag(R))) <= 1e-10 * np.max(np.abs(np.diag(R))):
            return None
        z_ls = solve_triangular(R, Q.T @ u)
        a = w[S] * s
        if a @ z_ls <= tau:
            z = z_ls
        else:
            # (R^T R)^{-1} a via two triangular solves
            h = solve_triangular(R, solve_triangular(R, a, trans="T"))
            lam = (a @ z_ls - tau) / (a @ h)
            z = z_ls - lam * h
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(z) != s):
        return None
    out = np.zeros_like(x)
    out[S] = z
    return out


def lasso_spg(m, u, tau: float, x0=None, opt_tol: float = 1e-7, max_iter: int = 10_000,
              memory: int = 10, step_bounds=(1e-10, 1e10)) -> LassoResult:
    """Solve ``min 1/2 ||Psi c - u||^2  s.t.  ||W c||_1 <= tau``.

    Projected gradient with Barzilai-Borwein steps and a nonmonotone
    (``memory``-deep) backtracking search along the projection arc.  Once the
    support and signs settle, the exact minimiser on that face is tried and
    kept when it lowers the objective.  Convergence is declared when the
    duality gap relative to the objective drops below ``opt_tol``.
    """
    m = _as_matrix(m)
    A = m.values
    u = np.asarray(u, dtype=float)
    N, P = A.shape
    w = m.column_weights
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if np.any(w <= 0):
        raise ValueError("all columns need positive norm")
    unorm = float(np.linalg.norm(u))
    step_min, step_max = step_bounds
    # objective floor used in the relative gap; keeps the test meaningful as f -> 0
    f_floor = max(0.5 * (1e-13 * unorm) ** 2, np.finfo(float).tiny)

    x = np.zeros(P) if x0 is None else project_weighted_l1(np.asarray(x0, float), w, tau)
    r = u - A @ x
    g = -(A.T @ r)
    f = 0.5 * float(r @ r)
    hist = np.full(memory, -np.inf)
    hist[0] = f

    dx = project_weighted_l1(x - g, w, tau) - x
    dxn = np.max(np.abs(dx)) if dx.size else 0.0
    step = step_max if dxn < 1.0 / step_max else min(step_max, max(step_min, 1.0 / dxn))

    tried_faces: set = set()
    stable = 0
    last_pattern = None
    it = 0
    converged = False
    gap = np.inf
    gnorm = float(np.max(np.abs(g) / w)) if P else 0.0
    while True:
        gnorm = float(np.max(np.abs(g) / w))
        gap = float(r @ r - r @ u + tau * gnorm)
        rgap = abs(gap) / max(f, f_floor)
        if rgap <= opt_tol or f <= f_floor:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1

        pattern = np.sign(x)
        if last_pattern is not None and np.array_equal(pattern, last_pattern):
            stable += 1
        else:
            stable = 0
        last_pattern = pattern
        if stable >= 3:
            key = pattern.tobytes()
            if key not in tried_faces:
                tried_faces.add(key)
                cand = _face_solve(A, u, w, tau, x)
                if cand is not None:
                    rc = u - A @ cand
                    fc = 0.5 * float(rc @ rc)
                    if fc <= f:
                        x, r, f = cand, rc, fc
                        g = -(A.T @ r)
                        hist[:] = -np.inf
                        hist[0] = f
                        continue

        x_old, g_old = x, g
        fmax = float(np.max(hist))
        t = 1.0
        for _ in range(20):
            x_new = project_weighted_l1(x - t * step * g, w, tau)
            s = x_new - x
            gts = float(g @ s)
            r_new = u - A @ x_new
            f_new = 0.5 * float(r_new @ r_new)
            if gts >= 0 or f_new < fmax + 1e-4 * gts:
                break
            t *= 0.5
        if gts >= 0 and f_new >= f:
            # no descent possible along the arc: stationary up to rounding
            converged = abs(gap) <= max(opt_tol * max(f, f_floor), 1e3 * _EPS * unorm ** 2)
            break
        x, r, f = x_new, r_new, f_new
        g = -(A.T @ r)
        hist[it % memory] = f

        s = x - x_old
        y = g - g_old
        sty = float(s @ y)
        if sty <= 0:
            step = step_max
        else:
            step = min(step_max, max(step_min, float(s @ s) / sty))

    return LassoResult(x, float(np.linalg.norm(r)), gap, gnorm, it, converged)


# ---------------------------------------------------------------------------
# BPDN


def bpdn(m, u, delta: float, rtol: float = 1e-4, opt_tol: float = 1e-7,
         max_newton: int = 100, max_iter: int = 10_000) -> RecoveryResult:
    """Basis pursuit denoising, ``min ||W c||_1  s.t.  ||Psi c - u||_2 <= delta``.

    Root finding on ``phi(tau) = ||r(tau)||_2 - delta`` starting from
    ``tau = 0``.  ``phi`` is convex and decreasing with derivative
    ``-||W^-1 Psi^T r||_inf / ||r||``, so Newton steps approach the root from
    the left; a secant step replaces Newton when the LASSO dual estimate is
    unreliable.  Each LASSO is warm started from the previous solution.
    """
    m = _as_matrix(m)
    u = np.asarray(u, dtype=float)
    N, P = m.shape
    if delta < 0:
        raise ValueError("delta must be non-negative")
    unorm = float(np.linalg.norm(u))
    if delta >= unorm:
        return RecoveryResult(np.zeros(P), unorm, 0, "bpdn", float(delta), True,
                              "zero solution feasible", [unorm])
    target = max(delta, 1e-12 * unorm)
    # round-off allowance: residuals below ~eps ||u|| cannot be resolved
    upper = target * (1.0 + rtol) + 100 * _EPS * unorm

    tau = 0.0
    x = np.zeros(P)
    history = [unorm]
    prev = None  # (tau, rnorm) of previous iterate for the secant fallback
    total_iter = 0
    status = "root finder did not converge"
    converged = False
    res = None
    for k in range(max_newton):
        res = lasso_spg(m, u, tau, x0=x, opt_tol=opt_tol, max_iter=max_iter)
        x = res.coefficients
        total_iter += res.iterations
        rnorm = res.residual_norm
        history.append(rnorm)
        if rnorm <= upper:
            converged, status = True, "ok"
            break
        if res.dual_norm <= 1e-12 * rnorm:
            status = "least-squares floor above delta"
            break
        tau_newton = tau + (rnorm - target) * rnorm / res.dual_norm
        if res.converged or prev is None:
            tau_next = tau_newton
        else:
            t0, r0 = prev
            slope = (rnorm - r0) / (tau - t0) if tau != t0 else -res.dual_norm / rnorm
            tau_next = tau - (rnorm - target) / slope if slope < 0 else tau_newton
        prev = (tau, rnorm)
        if tau_next <= tau * (1 + 1e-15) and k > 0:
            status = "root finder stalled"
            break
        tau = max(tau_next, 0.0)

    c = x
    rnorm = float(np.linalg.norm(u - m.values @ c))
    return RecoveryResult(c, rnorm, total_iter, "bpdn", float(delta), converged, status,
                          history)


def recover(m, u, delta: float, solver: str = "bpdn", **kwargs) -> RecoveryResult:
    if solver == "omp":
        return omp(m, u, delta, **kwargs)
    if solver == "bpdn":
        return bpdn(m, u, delta, **kwargs)
    raise ValueError(f"unknown solver {solver!r}")
