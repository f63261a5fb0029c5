"""Quadratic finite elements for ``-(a u')' = f`` on (0, 1), ``u(0) = u(1) = 0``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solveh_banded

# 3-point Gauss rule on the reference element [-1, 1]
_GX = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GW = np.array([5.0, 8.0, 5.0]) / 9.0
# quadratic Lagrange shape functions (nodes at -1, 0, 1) and their derivatives
_N = np.stack([_GX * (_GX - 1) / 2, 1 - _GX**2, _GX * (_GX + 1) / 2])  # (3 shapes, 3 pts)
_DN = np.stack([_GX - 0.5, -2 * _GX, _GX + 0.5])


class NonPositiveCoefficientError(ValueError):
    """The diffusion coefficient is not strictly positive at a quadrature point."""


@dataclass(frozen=True)
class Mesh1D:
    n_elements: int = 64

    def __post_init__(self):
        if self.n_elements < 1:
            raise ValueError("need at least one element")

    @property
    def h(self) -> float:
        return 1.0 / self.n_elements

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, 2 * self.n_elements + 1)

    @property
    def quadrature_points(self) -> np.ndarray:
        """Physical Gauss points, shape ``(n_elements, 3)``."""
        left = np.arange(self.n_elements) * self.h
        return left[:, None] + 0.5 * self.h * (_GX + 1.0)[None, :]


@dataclass(frozen=True)
class FemSolution:
    mesh: Mesh1D
    dof_values: np.ndarray

    def __call__(self, x):
        return eval_solution(self, x)


def solve_quadrature_values(a_q, f_const: float, mesh: Mesh1D) -> FemSolution:
    """Solve with the coefficient given directly at the Gauss points.

    ``a_q`` has shape ``(n_elements, 3)``; this is the fast path used when the
    same mesh is reused for many coefficient realizations.
    """
    a_q = np.asarray(a_q, dtype=float)
    ne = mesh.n_elements
    if a_q.shape != (ne, 3):
        raise ValueError(f"expected coefficient values of shape {(ne, 3)}, got {a_q.shape}")
    if not np.all(a_q > 0):
        e, q = np.argwhere(~(a_q > 0))[0]
        raise NonPositiveCoefficientError(
            f"coefficient {a_q[e, q]:.3g} at x={mesh.quadrature_points[e, q]:.6f} is not positive")
    h = mesh.h
    # element stiffness (ne, 3, 3) and load (ne, 3)
    ke = np.einsum("q,eq,aq,bq->eab", _GW, a_q, _DN, _DN) * (2.0 / h)
    fe = f_const * (_N @ _GW) * (h / 2.0)

    n = 2 * ne + 1
    diag = np.zeros(n)
    sup1 = np.zeros(n)  # sup1[j] = K[j-1, j]
    sup2 = np.zeros(n)  # sup2[j] = K[j-2, j]
    rhs = np.zeros(n)
    first = 2 * np.arange(ne)
    for a in range(3):
        np.add.at(diag, first + a, ke[:, a, a])
        np.add.at(rhs, first + a, fe[a])
    np.add.at(sup1, first + 1, ke[:, 0, 1])
    np.add.at(sup1, first + 2, ke[:, 1, 2])
    np.add.at(sup2, first + 2, ke[:, 0, 2])

    # drop the two Dirichlet nodes
    m = n - 2
    ab = np.zeros((3, m))
    ab[2] = diag[1:-1]
    ab[1, 1:] = sup1[2:-1]
    ab[0, 2:] = sup2[3:-1]
    try:
        interior = solveh_banded(ab, rhs[1:-1], lower=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"stiffness matrix is singular: {exc}") from exc
    u = np.zeros(n)
    u[1:-1] = interior
    return FemSolution(mesh, u)


def assemble_solve(coefficient: Callable, f_const: float = 1.0,
                   mesh: Mesh1D = Mesh1D()) -> FemSolution:
    """Galerkin solution for a coefficient given as a vectorized callable ``a(x)``."""
    xq = mesh.quadrature_points
    a_q = np.broadcast_to(np.asarray(coefficient(xq), dtype=float), xq.shape)
    return solve_quadrature_values(a_q, f_const, mesh)


def eval_solution(sol: FemSolution, x):
    """Quadratic interpolation of the nodal values; accepts scalars or arrays."""
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0) | (xa > 1)):
        raise ValueError("x must lie in [0, 1]")
    ne = sol.mesh.n_elements
    h = sol.mesh.h
    e = np.minimum(np.floor(xa / h).astype(int), ne - 1)
    xi = 2.0 * (xa - e * h) / h - 1.0
    u = sol.dof_values
    val = (u[2 * e] * xi * (xi - 1) / 2 + u[2 * e + 1] * (1 - xi * xi)
           + u[2 * e + 2] * xi * (xi + 1) / 2)
    return float(val) if np.ndim(val) == 0 else val


def convergence_study(coefficient: Callable, exact: Callable, f_const: float = 1.0,
                      levels=(16, 32, 64)) -> list[tuple[int, float]]:
    """Nodal max-error per mesh size, for checking spatial accuracy."""
    out = []
    for ne in levels:
        mesh = Mesh1D(ne)
        sol = assemble_solve(coefficient, f_const, mesh)
        out.append((ne, float(np.max(np.abs(sol.dof_values - exact(mesh.nodes))))))
    return out


def observed_orders(study) -> list[float]:
    return [float(np.log2(e0 / e1)) for (_, e0), (_, e1) in zip(study, study[1:])]
