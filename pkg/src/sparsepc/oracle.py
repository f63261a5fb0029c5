"""Reference PC coefficients and simple baselines.

Coefficients are keyed by multi-index so that vectors built on differently
ordered (or differently sized) bases can still be compared.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .pcbasis import BasisSpec, MultiIndex, eval_basis_matrix, from_indices
from .sampling import SampleSet

#: Largest tensor grid ``q**d`` we are willing to evaluate.
MAX_TENSOR_NODES = 10_000_000


class QuadratureBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientVector:
    basis: BasisSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.shape[0] != len(self.basis):
            raise ValueError(f"{vals.shape[0]} values for a basis of size {len(self.basis)}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("coefficients must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.basis)

    def __getitem__(self, alpha) -> float:
        return float(self.values[self.basis.position(alpha)])

    def get(self, alpha, default: float = 0.0) -> float:
        alpha = tuple(int(a) for a in alpha)
        return self[alpha] if alpha in self.basis else default

    def items(self) -> Iterable[tuple[MultiIndex, float]]:
        return zip(self.basis, (float(v) for v in self.values))

    def as_dict(self) -> dict[MultiIndex, float]:
        return dict(self.items())

    @classmethod
    def from_mapping(cls, mapping: dict, d: int | None = None) -> "CoefficientVector":
        keys = list(mapping)
        return cls(from_indices(keys, d), np.array([mapping[k] for k in keys], dtype=float))


def tensor_grid(d: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre nodes on ``[-1,1]^d`` with weights for the uniform
    probability density (they sum to one)."""
    if q < 1:
        raise ValueError("need at least one node per dimension")
    if q**d > MAX_TENSOR_NODES:
        raise QuadratureBudgetError(
            f"a {q}^{d} tensor grid has {q**d} nodes (limit {MAX_TENSOR_NODES}); "
            "use Monte Carlo projection (mc_coeffs) instead")
    x, w = np.polynomial.legendre.leggauss(q)
    w = w / 2.0
    nodes = np.array(list(itertools.product(x, repeat=d))).reshape(-1, d)
    weights = np.prod(np.array(list(itertools.product(w, repeat=d))).reshape(-1, d), axis=1)
    return nodes, weights


def project(values, weights, nodes, basis: BasisSpec, chunk: int = 65536) -> CoefficientVector:
    """``c_alpha = sum_k w_k u_k psi_alpha(y_k)`` accumulated in fixed-size chunks."""
    values = np.asarray(values, dtype=float)
    coeffs = np.zeros(len(basis))
    for start in range(0, len(values), chunk):
        sl = slice(start, start + chunk)
        coeffs += (weights[sl] * values[sl]) @ eval_basis_matrix(basis, nodes[sl])
    return CoefficientVector(basis, coeffs)


def tensor_quadrature_coeffs(forward: Callable, basis: BasisSpec, q_per_dim: int,
                             vectorized: bool = False) -> CoefficientVector:
    """Gauss-Legendre projection of ``forward`` onto ``basis``.

    Exact when ``forward * psi_alpha`` is a polynomial of degree ``<= 2q-1`` in
    every variable.  With ``vectorized=True`` the forward model is called once
    on the ``(q^d, d)`` node array, otherwise once per node.
    """
    nodes, weights = tensor_grid(basis.dimension, q_per_dim)
    if vectorized:
        values = np.asarray(forward(nodes), dtype=float).reshape(-1)
    else:
        values = np.array([forward(y) for y in nodes], dtype=float)
    return project(values, weights, nodes, basis)


def mc_coeffs(samples: SampleSet, values, basis: BasisSpec) -> CoefficientVector:
    """Sample-average projection ``(1/N) sum_i u_i psi_alpha(y_i)``."""
    values = np.asarray(values, dtype=float).ravel()
    if values.shape[0] != samples.n:
        raise ValueError(f"{values.shape[0]} values for {samples.n} samples")
    return CoefficientVector(basis, values @ eval_basis_matrix(basis, samples.points) / samples.n)


def statistics(c: CoefficientVector) -> tuple[float, float]:
    """Mean and standard deviation implied by an orthonormal expansion."""
    zero = (0,) * c.basis.dimension
    mean = c.get(zero)
    rest = np.array([v for alpha, v in c.items() if any(alpha)])
    return mean, float(math.sqrt(np.sum(rest**2))) if rest.size else 0.0


def rms_error(c: CoefficientVector, c_ref: CoefficientVector, relative: bool = False) -> float:
    """``||c - c_ref||_2`` over the union of both index sets."""
    a, b = c.as_dict(), c_ref.as_dict()
    keys = a.keys() | b.keys()
    diff = np.array([a.get(k, 0.0) - b.get(k, 0.0) for k in keys])
    err = float(np.linalg.norm(diff))
    if relative:
        ref = float(np.linalg.norm(c_ref.values))
        if ref == 0:
            raise ZeroDivisionError("reference coefficients are all zero")
        err /= ref
    return err


def mc_statistics(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        raise ValueError("need at least two values for a sample standard deviation")
    return float(values.mean()), float(values.std(ddof=1))


def save_coefficients(c: CoefficientVector, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "value"])
        for alpha, v in c.items():
            w.writerow(["-".join(map(str, alpha)), repr(v)])


def load_coefficients(path) -> CoefficientVector:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no coefficients")
    keys = [tuple(int(t) for t in r["alpha"].split("-")) for r in rows]
    return CoefficientVector(from_indices(keys), np.array([float(r["value"]) for r in rows]))
