"""Karhunen-Loeve representation of the random diffusion coefficient.

The covariance operator on ``[0, 1]`` is discretized by the Nystrom method on
Gauss-Legendre nodes, and the symmetrized matrix ``W^1/2 K W^1/2`` is
diagonalized with cyclic Jacobi rotations.  The resulting field is

    a(x, y) = mean + sigma * sum_i sqrt(lambda_i) phi_i(x) y_i .
"""
from __future__ import annotations

import json
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline


class JacobiConvergenceError(RuntimeError):
    pass


def gaussian_cov(x1, x2, l_c: float):
    """``exp(-(x1 - x2)^2 / l_c^2)``; broadcasts over array inputs."""
    if l_c <= 0:
        raise ValueError("correlation length must be positive")
    diff = np.subtract(x1, x2)
    out = np.exp(-(diff * diff) / (l_c * l_c))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CovarianceSpec:
    correlation_length: float
    kernel: Optional[Callable] = None

    def __post_init__(self):
        if not self.correlation_length > 0:
            raise ValueError("correlation length must be positive")

    def __call__(self, x1, x2):
        if self.kernel is None:
            return gaussian_cov(x1, x2, self.correlation_length)
        return self.kernel(x1, x2, self.correlation_length)


def gauss_legendre_unit(m: int) -> tuple[np.ndarray, np.ndarray]:
    """``m``-point Gauss-Legendre rule mapped to ``[0, 1]`` (weights sum to 1)."""
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


def _round_robin(n: int):
    """Rounds of disjoint index pairs covering every pair exactly once."""
    players = list(range(n + (n % 2)))
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            arr = np.array(pairs)
            rounds.append((arr[:, 0], arr[:, 1]))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are scheduled in round-robin order so every round acts on
    disjoint index pairs and can be applied as one vectorized update.

    Returns
    -------
    eigenvalues : ndarray, shape (n,)
        Unsorted.
    eigenvectors : ndarray, shape (n, n)
        Column ``k`` belongs to ``eigenvalues[k]``.
    sweeps : int
    """
    A = np.array(A, dtype=float, copy=True)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n == 1:
        return np.diag(A).copy(), V, 0
    rounds = _round_robin(n)
    scale = np.linalg.norm(A)
    if scale == 0:
        return np.zeros(n), V, 0

    mask = ~np.eye(n, dtype=bool)

    def off(M):
        return math.sqrt(np.sum(M[mask] ** 2))

    # entries below this cannot affect the stopping test and are left alone
    skip = tol * scale / n
    for sweep in range(1, max_sweeps + 1):
        if off(A) <= tol * scale:
            return np.diag(A).copy(), V, sweep - 1
        for p, q in rounds:
            apq = A[p, q]
            active = np.abs(apq) > skip
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (A[q, q] - A[p, p]) / (2.0 * apq)
            big = np.abs(theta) > 1e100
            th = np.where(big, 1.0, theta)
            t = np.sign(th) / (np.abs(th) + np.sqrt(th * th + 1.0))
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = c * Ap - s * Aq
            A[:, q] = s * Ap + c * Aq
            Ap, Aq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            A[p, q] = 0.0
            A[q, p] = 0.0
            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = c * Vp - s * Vq
            V[:, q] = s * Vp + c * Vq
    if off(A) <= tol * scale:
        return np.diag(A).copy(), V, max_sweeps
    raise JacobiConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")


@dataclass(frozen=True)
class NystromSpectrum:
    """Full discrete spectrum: all ``M`` eigenpairs at the quadrature nodes."""

    nodes: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray  # descending, clipped at 0
    phi_nodes: np.ndarray  # (M, M), column i is phi_i at the nodes
    cov: CovarianceSpec


@functools.lru_cache(maxsize=16)
def nystrom_spectrum(cov: CovarianceSpec, m_quad: int = 200) -> NystromSpectrum:
    x, w = gauss_legendre_unit(m_quad)
    K = cov(x[:, None], x[None, :])
    sw = np.sqrt(w)
    lam, V, _ = jacobi_eigh(sw[:, None] * K * sw[None, :])
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    V = V[:, order]
    lam = np.where(lam < 0, 0.0, lam)
    phi = V / sw[:, None]
    # unit quadrature norm, then fix the sign: integral >= 0, else phi(first node) >= 0
    phi /= np.sqrt(np.einsum("a,ai,ai->i", w, phi, phi))
    integrals = w @ phi
    flip = np.where(np.abs(integrals) > 1e-10, integrals < 0, phi[0] < 0)
    phi[:, flip] *= -1.0
    for arr in (x, w, lam, phi):
        arr.setflags(write=False)
    return NystromSpectrum(x, w, lam, phi, cov)


@dataclass(frozen=True)
class KLExpansion:
    d: int
    eigenvalues: np.ndarray
    phi_nodes: np.ndarray  # (M, d)
    nodes: np.ndarray
    weights: np.ndarray
    cov: CovarianceSpec
    mean_bar_a: float = 0.0
    sigma_a: float = 1.0
    all_eigenvalues: Optional[np.ndarray] = field(default=None, repr=False)

    def with_field(self, mean_bar_a: float, sigma_a: float) -> "KLExpansion":
        if sigma_a < 0:
            raise ValueError("sigma_a must be non-negative")
        return KLExpansion(self.d, self.eigenvalues, self.phi_nodes, self.nodes, self.weights,
                           self.cov, float(mean_bar_a), float(sigma_a), self.all_eigenvalues)

    def eigenfunctions(self, x) -> np.ndarray:
        """``phi_i(x)`` for every retained mode; shape ``x.shape + (d,)``.

        Off-node values use the Nystrom extension
        ``phi_i(x) = (1/lambda_i) sum_b w_b C(x, x_b) phi_i(x_b)``; modes with
        ``lambda_i <= 1e-12`` fall back to cubic interpolation of the node values.
        """
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        Kx = self.cov(flat[:, None], self.nodes[None, :])
        out = np.empty((flat.size, self.d))
        big = self.eigenvalues > 1e-12
        if big.any():
            out[:, big] = (Kx * self.weights) @ self.phi_nodes[:, big] / self.eigenvalues[big]
        if (~big).any():
            spline = CubicSpline(self.nodes, self.phi_nodes[:, ~big], axis=0,
                                 extrapolate=True)
            out[:, ~big] = spline(flat)
        return out.reshape(x.shape + (self.d,))

    def field(self, x, Y) -> np.ndarray:
        """Coefficient values for many inputs: shape ``(n_y, n_x)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[1] != self.d:
            raise ValueError(f"y has dimension {Y.shape[1]}, expansion has {self.d}")
        if np.any((x < 0) | (x > 1)):
            raise ValueError("x must lie in [0, 1]")
        modes = self.eigenfunctions(x) * np.sqrt(self.eigenvalues)  # (n_x, d)
        return self.mean_bar_a + self.sigma_a * (Y @ modes.T)

    # serialization
    def to_json(self, path) -> None:
        payload = {
            "d": self.d,
            "correlation_length": self.cov.correlation_length,
            "mean_bar_a": self.mean_bar_a,
            "sigma_a": self.sigma_a,
            "m_quad": len(self.nodes),
            "eigenvalues": self.eigenvalues.tolist(),
            "nodes": self.nodes.tolist(),
            "weights": self.weights.tolist(),
            "phi_nodes": self.phi_nodes.tolist(),
        }
        if self.all_eigenvalues is not None:
            payload["all_eigenvalues"] = self.all_eigenvalues.tolist()
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def from_json(cls, path) -> "KLExpansion":
        data = json.loads(Path(path).read_text())
        allev = data.get("all_eigenvalues")
        return cls(int(data["d"]), np.array(data["eigenvalues"]), np.array(data["phi_nodes"]),
                   np.array(data["nodes"]), np.array(data["weights"]),
                   CovarianceSpec(float(data["correlation_length"])),
                   float(data["mean_bar_a"]), float(data["sigma_a"]),
                   None if allev is None else np.array(allev))


def nystrom_eig(cov: CovarianceSpec, m_quad: int = 200, d: int = 1) -> KLExpansion:
    """Top-``d`` eigenpairs of the covariance operator (unit field: mean 0, sigma 1)."""
    if d > m_quad:
        raise ValueError("cannot retain more modes than quadrature nodes")
    spec = nystrom_spectrum(cov, m_quad)
    return KLExpansion(d, spec.eigenvalues[:d].copy(), spec.phi_nodes[:, :d].copy(),
                       spec.nodes, spec.weights, cov, 0.0, 1.0, spec.eigenvalues.copy())


def build_field(mean_bar_a: float, sigma_a: float, correlation_length: float, d: int,
                m_quad: int = 200) -> KLExpansion:
    kl = nystrom_eig(CovarianceSpec(correlation_length), m_quad, d)
    return kl.with_field(mean_bar_a, sigma_a)


def eval_field(kl: KLExpansion, x: float, y) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    y = np.asarray(y, dtype=float).ravel()
    if y.size != kl.d:
        raise ValueError(f"y has dimension {y.size}, expansion has {kl.d}")
    return float(kl.field([x], y[None, :])[0, 0])


def positivity_margin(kl: KLExpansion, grid: int = 1001) -> float:
    """Worst case over ``y in [-1,1]^d`` of the coefficient, minimized over an
    ``x`` grid: ``min_x  mean - sigma sum_i sqrt(lambda_i) |phi_i(x)|``."""
    x = np.linspace(0.0, 1.0, grid)
    spread = np.abs(kl.eigenfunctions(x)) @ np.sqrt(kl.eigenvalues)
    return float(np.min(kl.mean_bar_a - kl.sigma_a * spread))
