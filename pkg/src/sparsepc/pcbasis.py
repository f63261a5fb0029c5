"""Multi-index sets and the normalized multivariate Legendre basis.

A basis function is identified by a multi-index ``alpha = (a_1, ..., a_d)``
and evaluates to the product of univariate Legendre polynomials, each scaled
so that ``E[psi_k(y)**2] = 1`` for ``y ~ U[-1, 1]``.

Ordering of the index sets is canonical: ascending total order, and within a
total order ascending on the reversed tuple ``(a_d, ..., a_1)``.  Indices that
only involve the leading variables therefore come first, which is what makes
prefix truncations of the next order meaningful.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

MultiIndex = tuple[int, ...]

#: Refuse to materialize index sets beyond this many elements.
MAX_SET_SIZE = 10_000_000
_INT64_MAX = 2**63 - 1


class SetSizeError(OverflowError):
    """Raised when an index set (or its cardinality) is too large to handle."""


def total_order(alpha: Sequence[int]) -> int:
    return int(sum(alpha))


def dimensionality(alpha: Sequence[int]) -> int:
    """Number of active variables, ``#{i : alpha_i > 0}``."""
    return sum(1 for a in alpha if a > 0)


def cardinality(p: int, d: int) -> int:
    """Exact size ``(p+d)! / (p! d!)`` of the total-order set.

    Uses the multiplicative binomial formula so no factorial is formed.
    """
    if p < 0 or d < 1:
        raise ValueError(f"need p >= 0 and d >= 1, got p={p}, d={d}")
    k = min(p, d)
    n = p + d
    out = 1
    for i in range(1, k + 1):
        out = out * (n - k + i) // i
    if out > _INT64_MAX:
        raise SetSizeError(f"cardinality of Lambda_(p={p}, d={d}) exceeds 64-bit range")
    return out


def _compositions(total: int, d: int, nu: int) -> Iterator[MultiIndex]:
    """All ``alpha`` of length ``d`` with sum ``total`` and at most ``nu`` nonzeros."""
    if d == 1:
        if total == 0 or nu >= 1:
            yield (total,)
        return
    for first in range(total, -1, -1):
        rest_nu = nu - (1 if first > 0 else 0)
        if rest_nu < 0:
            continue
        for tail in _compositions(total - first, d - 1, rest_nu):
            yield (first,) + tail


def _canonical_key(alpha: MultiIndex) -> tuple:
    return (sum(alpha),) + tuple(reversed(alpha))


@dataclass(frozen=True)
class MultiIndexSet:
    """Ordered collection of multi-indices defining a PC basis.

    ``indices`` is an ``(P, d)`` integer array in canonical order.  ``prefix_limit``
    records how many indices of order ``order`` were kept when the set was
    obtained by :func:`prefix_truncate`; it is ``None`` for complete sets.
    """

    dimension: int
    order: int
    nu_limit: int
    indices: np.ndarray
    prefix_limit: Optional[int] = None
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != self.dimension:
            raise ValueError("indices must have shape (P, dimension)")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        lookup = {tuple(int(v) for v in row): j for j, row in enumerate(idx)}
        if len(lookup) != idx.shape[0]:
            raise ValueError("duplicate multi-indices")
        object.__setattr__(self, "_lookup", lookup)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __iter__(self) -> Iterator[MultiIndex]:
        for row in self.indices:
            yield tuple(int(v) for v in row)

    def __getitem__(self, j: int) -> MultiIndex:
        return tuple(int(v) for v in self.indices[j])

    def __contains__(self, alpha) -> bool:
        return tuple(alpha) in self._lookup

    def position(self, alpha: Sequence[int]) -> int:
        """Position of ``alpha`` in the set; ``KeyError`` if absent."""
        return self._lookup[tuple(int(a) for a in alpha)]

    @property
    def size(self) -> int:
        return len(self)

    def orders(self) -> np.ndarray:
        return self.indices.sum(axis=1)

    def as_tuples(self) -> list[MultiIndex]:
        return list(self)

    def __eq__(self, other):
        if not isinstance(other, MultiIndexSet):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.order == other.order
            and self.nu_limit == other.nu_limit
            and self.prefix_limit == other.prefix_limit
            and np.array_equal(self.indices, other.indices)
        )

    def __hash__(self):
        return hash((self.dimension, self.order, self.nu_limit, self.prefix_limit,
                     self.indices.tobytes()))


#: A basis is fully described by its index set; index 0 is the constant.
BasisSpec = MultiIndexSet


def restricted_set(p: int, nu: int, d: int) -> MultiIndexSet:
    """``Lambda_{p,nu}``: total order <= p and at most ``nu`` active variables."""
    if p < 0 or d < 1:
        raise ValueError(f"need p >= 0 and d >= 1, got p={p}, d={d}")
    if not 0 <= nu <= d:
        raise ValueError(f"need 0 <= nu <= d, got nu={nu}, d={d}")
    if cardinality(p, d) > MAX_SET_SIZE:
        raise SetSizeError(
            f"Lambda_(p={p}, d={d}) has {cardinality(p, d)} elements (limit {MAX_SET_SIZE})")
    rows: list[MultiIndex] = []
    for k in range(p + 1):
        block = list(_compositions(k, d, nu))
        block.sort(key=_canonical_key)
        rows.extend(block)
    return MultiIndexSet(d, p, nu, np.array(rows, dtype=np.int64).reshape(-1, d))


def total_order_set(p: int, d: int) -> MultiIndexSet:
    """``Lambda_{p,d}`` in canonical order, of size ``cardinality(p, d)``."""
    return restricted_set(p, d, d)


def from_indices(indices: Iterable[Sequence[int]], d: Optional[int] = None) -> MultiIndexSet:
    """Build a set from arbitrary indices, kept in the order given."""
    arr = np.array([tuple(a) for a in indices], dtype=np.int64)
    if arr.size == 0:
        if d is None:
            raise ValueError("cannot infer dimension of an empty set")
        arr = arr.reshape(0, d)
    if (arr < 0).any():
        raise ValueError("multi-index entries must be non-negative")
    dim = arr.shape[1]
    order = int(arr.sum(axis=1).max()) if len(arr) else 0
    nu = int((arr > 0).sum(axis=1).max()) if len(arr) else 0
    return MultiIndexSet(dim, order, nu, arr)


def prefix_truncate(index_set: MultiIndexSet, keep_through_order: int,
                    extra_count: int) -> MultiIndexSet:
    """Keep every index of order <= ``keep_through_order`` plus the first
    ``extra_count`` indices of the next order (canonical order)."""
    orders = index_set.orders()
    low = orders <= keep_through_order
    nxt = np.flatnonzero(orders == keep_through_order + 1)
    if extra_count < 0 or extra_count > len(nxt):
        raise ValueError(
            f"extra_count={extra_count} but only {len(nxt)} indices of order "
            f"{keep_through_order + 1} are available")
    keep = np.concatenate([np.flatnonzero(low), nxt[:extra_count]])
    keep.sort()
    if extra_count == 0:
        return MultiIndexSet(index_set.dimension, keep_through_order,
                             index_set.nu_limit, index_set.indices[keep])
    return MultiIndexSet(index_set.dimension, keep_through_order + 1, index_set.nu_limit,
                         index_set.indices[keep], prefix_limit=extra_count)


def legendre_table(y, max_degree: int) -> np.ndarray:
    """Orthonormal Legendre values ``psi_k(y)`` for ``k = 0..max_degree``.

    The last axis of the result indexes the degree.
    """
    y = np.asarray(y, dtype=float)
    out = np.empty(y.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = y
    for k in range(1, max_degree):
        out[..., k + 1] = ((2 * k + 1) * y * out[..., k] - k * out[..., k - 1]) / (k + 1)
    out *= np.sqrt(2 * np.arange(max_degree + 1) + 1.0)
    return out


def eval_univariate(k: int, y: float) -> float:
    """Normalized Legendre polynomial ``sqrt(2k+1) L_k(y)``."""
    if k < 0:
        raise ValueError("degree must be non-negative")
    return float(legendre_table(y, k)[..., k])


def eval_basis(alpha: Sequence[int], y) -> float:
    alpha = tuple(int(a) for a in alpha)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != len(alpha):
        raise ValueError(f"point has dimension {len(y)}, multi-index has {len(alpha)}")
    if not alpha:
        return 1.0
    table = legendre_table(y, max(alpha))
    return float(np.prod(table[np.arange(len(alpha)), alpha]))


def eval_basis_matrix(index_set: MultiIndexSet, points) -> np.ndarray:
    """Evaluate every basis function at every point.

    Parameters
    ----------
    index_set : MultiIndexSet
        Basis of size ``P`` in ``d`` variables.
    points : array_like, shape (N, d)

    Returns
    -------
    ndarray, shape (N, P)
        ``out[i, j] = psi_{alpha_j}(points[i])``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = index_set.dimension
    if pts.shape[1] != d:
        raise ValueError(f"points have dimension {pts.shape[1]}, basis has {d}")
    idx = index_set.indices
    pmax = int(idx.max()) if idx.size else 0
    table = legendre_table(pts, pmax)  # (N, d, pmax+1)
    out = np.ones((pts.shape[0], len(index_set)))
    for k in range(d):
        col = idx[:, k]
        active = col > 0
        if active.any():
            out[:, active] *= table[:, k, :][:, col[active]]
    return out


def sup_norm(alpha: Sequence[int]) -> float:
    """``max |psi_alpha|`` over ``[-1, 1]^d``, attained at the corners."""
    return float(np.prod(np.sqrt(2.0 * np.asarray(alpha, dtype=float) + 1.0)))


def coherence_exponent(p: int, d: int) -> float:
    """``c_{p,d} = (ln 3 / 2) p / ln P`` with ``P = cardinality(p, d)``."""
    P = cardinality(p, d)
    if P <= 1:
        raise ZeroDivisionError("coherence exponent undefined for a one-element basis")
    return 0.5 * math.log(3.0) * p / math.log(P)
