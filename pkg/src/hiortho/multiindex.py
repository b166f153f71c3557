"""Multi-index bookkeeping for partial-derivative operators.

A derivative ``D^m`` with respect to a ``d``-vector is labelled by the sorted
tuple of coordinates it differentiates, e.g. ``(0, 0, 1)`` is
``d^3 / d eta_0^2 d eta_1``.  Coordinates are 0-based in code.  An
:class:`IndexFamily` stacks every such label of order ``1..q`` in graded
lexicographic order, which fixes the row/column layout of every matrix in the
orthogonalization engine.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache


@dataclass(frozen=True, order=True)
class MultiIndex:
    """Sorted tuple of coordinate labels; ``order`` is its length."""

    entries: tuple[int, ...]

    def __post_init__(self):
        entries = tuple(int(e) for e in self.entries)
        if any(e < 0 for e in entries):
            raise ValueError(f"negative coordinate label in {entries}")
        if list(entries) != sorted(entries):
            raise ValueError(f"multi-index entries must be non-decreasing, got {entries}")
        object.__setattr__(self, "entries", entries)

    @property
    def order(self) -> int:
        return len(self.entries)

    def exponents(self, dim: int) -> tuple[int, ...]:
        """Exponent-vector form: how many times each coordinate appears."""
        counts = [0] * dim
        for e in self.entries:
            if e >= dim:
                raise ValueError(f"label {e} out of range for dimension {dim}")
            counts[e] += 1
        return tuple(counts)

    @classmethod
    def from_exponents(cls, exps) -> "MultiIndex":
        labels = []
        for coord, k in enumerate(exps):
            labels.extend([coord] * int(k))
        return cls(tuple(labels))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __repr__(self):
        return f"MultiIndex{self.entries}"


def factorial_weight(m) -> int:
    """Taylor weight ``m! = prod_r (count of coordinate r)!``."""
    entries = m.entries if isinstance(m, MultiIndex) else tuple(m)
    weight = 1
    for _, group in itertools.groupby(sorted(entries)):
        weight *= math.factorial(len(list(group)))
    return weight


@dataclass(frozen=True)
class IndexFamily:
    """All multi-indices of order 1..q over ``d_eta`` coordinates.

    Ordering is by order first, lexicographic inside each order block.
    """

    d_eta: int
    q: int
    indices: tuple[MultiIndex, ...] = field(repr=False)
    block_sizes: tuple[int, ...]

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __getitem__(self, k):
        return self.indices[k]

    @property
    def position(self) -> dict[MultiIndex, int]:
        return _positions(self.d_eta, self.q)

    def index_of(self, m) -> int:
        if not isinstance(m, MultiIndex):
            m = MultiIndex(tuple(sorted(m)))
        return self.position[m]

    def block(self, p: int) -> slice:
        """Slice of the order-``p`` block."""
        if not 1 <= p <= self.q:
            raise ValueError(f"order {p} outside 1..{self.q}")
        start = sum(self.block_sizes[: p - 1])
        return slice(start, start + self.block_sizes[p - 1])

    def orders(self) -> list[int]:
        return [m.order for m in self.indices]

    def exponent_table(self) -> list[tuple[int, ...]]:
        return [m.exponents(self.d_eta) for m in self.indices]


def block_size(d_eta: int, p: int) -> int:
    return math.comb(d_eta + p - 1, p)


@lru_cache(maxsize=None)
def enumerate_indices(d_eta: int, q: int) -> IndexFamily:
    """Canonical family of derivative labels up to order ``q``.

    >>> [m.entries for m in enumerate_indices(2, 2)]
    [(0,), (1,), (0, 0), (0, 1), (1, 1)]
    """
    if int(d_eta) != d_eta or int(q) != q:
        raise TypeError("d_eta and q must be integers")
    if d_eta < 1 or q < 1:
        raise ValueError(f"need d_eta >= 1 and q >= 1, got d_eta={d_eta}, q={q}")
    indices = []
    sizes = []
    for p in range(1, q + 1):
        # combinations_with_replacement yields sorted tuples in lexicographic order
        block = [MultiIndex(c) for c in itertools.combinations_with_replacement(range(d_eta), p)]
        sizes.append(len(block))
        indices.extend(block)
    return IndexFamily(d_eta=d_eta, q=q, indices=tuple(indices), block_sizes=tuple(sizes))


@lru_cache(maxsize=None)
def _positions(d_eta: int, q: int) -> dict[MultiIndex, int]:
    return {m: k for k, m in enumerate(enumerate_indices(d_eta, q))}


def family_size(d_eta: int, q: int) -> int:
    return sum(block_size(d_eta, p) for p in range(1, q + 1))
