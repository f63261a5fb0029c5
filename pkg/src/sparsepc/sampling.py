"""Random sampling of the input space and measurement-matrix diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from .pcbasis import (BasisSpec, MultiIndexSet, cardinality, coherence_exponent,
                      eval_basis_matrix, from_indices)


def _row(seed: int, i: int, d: int) -> np.ndarray:
    # Philox is counter based; keying on (seed, i) makes row i independent of N.
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, i], dtype=np.uint64)
    u = np.random.Generator(np.random.Philox(key=key)).random(d)
    return 2.0 * u - 1.0


@dataclass(frozen=True)
class SampleSet:
    """``n x d`` i.i.d. uniform points on ``[-1, 1]^d``.

    Row ``i`` is the ``stream_position + i``-th draw for ``seed`` and does not
    depend on how many rows were requested.
    """

    d: int
    points: np.ndarray
    seed: int
    stream_position: int = 0

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def head(self, n: int) -> "SampleSet":
        return SampleSet(self.d, self.points[:n], self.seed, self.stream_position)

    def subset(self, rows) -> np.ndarray:
        return self.points[np.asarray(rows)]


def draw_samples(d: int, n: int, seed: int, start: int = 0) -> SampleSet:
    if n < 1:
        raise ValueError("need at least one sample")
    if d < 1:
        raise ValueError("need d >= 1")
    pts = np.empty((n, d))
    for i in range(n):
        pts[i] = _row(int(seed), start + i, d)
    pts.setflags(write=False)
    return SampleSet(d, pts, int(seed), start)


@dataclass(frozen=True)
class MeasurementMatrix:
    """Basis evaluations ``values[i, j] = psi_{alpha_j}(y_i)`` and column norms."""

    values: np.ndarray
    basis: BasisSpec
    column_weights: np.ndarray
    seed: Optional[int] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def head(self, n: int) -> "MeasurementMatrix":
        return _from_values(self.values[:n], self.basis, self.seed)

    def rows(self, rows) -> "MeasurementMatrix":
        return _from_values(self.values[np.asarray(rows)], self.basis, self.seed)


def _from_values(values: np.ndarray, basis: BasisSpec, seed=None) -> MeasurementMatrix:
    values = np.asarray(values, dtype=float)
    weights = np.sqrt(np.einsum("ij,ij->j", values, values))
    return MeasurementMatrix(values, basis, weights, seed)


def assemble_measurement(basis: BasisSpec, samples: SampleSet) -> MeasurementMatrix:
    if samples.d != basis.dimension:
        raise ValueError(
            f"samples have dimension {samples.d}, basis has {basis.dimension}")
    return _from_values(eval_basis_matrix(basis, samples.points), basis, samples.seed)


def matrix_from_array(values, basis: Optional[BasisSpec] = None) -> MeasurementMatrix:
    """Wrap an arbitrary matrix (e.g. for tests); a trivial basis is attached
    when none is given."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if basis is None:
        P = values.shape[1]
        basis = from_indices([(j,) for j in range(P)])
    return _from_values(values, basis)


def mutual_coherence(m) -> float:
    """Largest absolute cosine between two distinct columns."""
    A = m.values if isinstance(m, MeasurementMatrix) else np.asarray(m, dtype=float)
    if A.shape[1] < 2:
        raise ValueError("mutual coherence needs at least two columns")
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        j = int(np.flatnonzero(norms == 0)[0])
        raise ValueError(f"column {j} has zero norm (degenerate sampling)")
    An = A / norms
    G = np.abs(An.T @ An)
    np.fill_diagonal(G, 0.0)
    return float(min(G.max(), 1.0))


@dataclass(frozen=True)
class CoherenceBound:
    r: float
    prob_bound: float
    applicable: bool

    @property
    def mu_threshold(self) -> float:
        return self.r / (1.0 - self.r) if self.r < 1 else math.inf


def coherence_tail_bound(n: int, p: int, d: int, zeta: float) -> CoherenceBound:
    """Concentration bound ``Prob[mu >= r/(1-r)] <= 4 P^(2 - 2 zeta)``.

    ``r = 2 sqrt(zeta P^(4 c_pd) ln P / n)``; note ``P^(4 c_pd) = 9^p``.  The
    bound only holds for ``r <= 1/2`` and ``zeta > 1``; outside that range the
    values are still returned but ``applicable`` is False.
    """
    P = cardinality(p, d)
    growth = P ** (4.0 * coherence_exponent(p, d))
    r = 2.0 * math.sqrt(zeta * growth * math.log(P) / n)
    prob = 4.0 * P ** (2.0 - 2.0 * zeta)
    return CoherenceBound(r, prob, applicable=(r <= 0.5 and zeta > 1))


def sparsity_budget(n: int, p: int, d: int, mode: Literal["ell1", "ell0"] = "ell1") -> float:
    """Theoretical recoverable sparsity ``S_max`` for ``n`` samples."""
    P = cardinality(p, d)
    if P < 2:
        raise ValueError("sparsity budget needs P >= 2")
    const = {"ell1": 64.0, "ell0": 16.0}[mode]
    growth = P ** (4.0 * coherence_exponent(p, d))
    return n / (const * growth * math.log(P))


# --- serialization ---------------------------------------------------------

def _write_table(path, header: dict, rows: np.ndarray, columns: Optional[list] = None):
    path = Path(path)
    with path.open("w") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
        if columns is not None:
            fh.write(",".join(columns) + "\n")
        np.savetxt(fh, rows, delimiter=",", fmt="%.17g")


def _read_table(path):
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing header line")
        header = dict(tok.split("=", 1) for tok in first[1:].split())
        pos = fh.tell()
        second = fh.readline()
        columns = None
        if second and not _is_numeric_row(second):
            columns = second.strip().split(",")
        else:
            fh.seek(pos)
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, columns, data


def _is_numeric_row(line: str) -> bool:
    try:
        [float(t) for t in line.strip().split(",")]
        return True
    except ValueError:
        return False


def save_samples(samples: SampleSet, path) -> None:
    header = {"kind": "samples", "d": samples.d, "N": samples.n,
              "seed": samples.seed, "start": samples.stream_position}
    _write_table(path, header, samples.points)


def load_samples(path) -> SampleSet:
    header, _, data = _read_table(path)
    d = int(header["d"])
    return SampleSet(d, data.reshape(-1, d), int(header["seed"]), int(header.get("start", 0)))


def save_measurement(m: MeasurementMatrix, path) -> None:
    """CSV: header line with d, N, P, seed; then the multi-indices as column
    names (dash-joined); then ``N`` rows of basis values."""
    N, P = m.shape
    header = {"kind": "measurement", "d": m.basis.dimension, "N": N, "P": P,
              "seed": "none" if m.seed is None else m.seed}
    cols = ["-".join(str(a) for a in alpha) for alpha in m.basis]
    _write_table(path, header, m.values, cols)


def load_measurement(path) -> MeasurementMatrix:
    header, cols, data = _read_table(path)
    P = int(header["P"])
    d = int(header["d"])
    values = data.reshape(-1, P)
    if cols is not None:
        basis = from_indices([tuple(int(t) for t in c.split("-")) for c in cols], d)
    else:
        basis = None
    seed = None if header.get("seed", "none") == "none" else int(header["seed"])
    m = matrix_from_array(values, basis)
    return MeasurementMatrix(m.values, m.basis, m.column_weights, seed)


__all__ = [
    "SampleSet", "MeasurementMatrix", "CoherenceBound", "draw_samples",
    "assemble_measurement", "matrix_from_array", "mutual_coherence",
    "coherence_tail_bound", "sparsity_budget", "save_samples", "load_samples",
    "save_measurement", "load_measurement",
]
