"""Non-crossing partitions, Kreweras complements and non-crossing graphs.

Elements of the ground set are the integers ``1..k``.  A :class:`Partition`
is kept in canonical form (each block sorted, blocks ordered by their
minimum) so that structural equality is set equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Sequence

__all__ = [
    "K_MAX",
    "NCG_K_MAX",
    "SizeLimitError",
    "DomainError",
    "Partition",
    "NonCrossingGraph",
    "catalan",
    "enumerate_ncp",
    "enumerate_all_partitions",
    "is_noncrossing",
    "kreweras",
    "enumerate_ncg",
    "connected_components",
]

K_MAX = 10
NCG_K_MAX = 7
CATALAN_MAX = 30


class SizeLimitError(ValueError):
    """Requested enumeration is above the configured size guard."""


class DomainError(ValueError):
    """Input lies outside the domain of an operation."""


@dataclass(frozen=True)
class Partition:
    """A set partition of ``{1, ..., k}`` in canonical form."""

    k: int
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        canon = tuple(sorted(tuple(sorted(b)) for b in self.blocks))
        seen = [x for b in canon for x in b]
        if any(len(b) == 0 for b in canon):
            raise ValueError("empty block")
        if sorted(seen) != list(range(1, self.k + 1)):
            raise ValueError(f"blocks {self.blocks!r} do not partition 1..{self.k}")
        object.__setattr__(self, "blocks", canon)

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]], k: int | None = None) -> "Partition":
        blocks = [tuple(b) for b in blocks]
        if k is None:
            k = max(max(b) for b in blocks)
        return cls(k, tuple(blocks))

    @classmethod
    def from_string(cls, text: str, k: int | None = None) -> "Partition":
        """Parse ``"134|2|5|6"`` (or ``"1,3,4|2|5|6"`` for large ground sets).

        Digits are read one element each unless the text contains a comma or
        ``k > 9``, in which case blocks are comma separated.
        """
        blocks = []
        comma = "," in text or (k is not None and k > 9)
        for part in text.strip().split("|"):
            part = part.strip()
            if not part:
                raise ValueError(f"empty block in {text!r}")
            if comma:
                blocks.append(tuple(int(s) for s in part.split(",")))
            else:
                blocks.append(tuple(int(c) for c in part))
        return cls.from_blocks(blocks, k)

    @classmethod
    def singletons(cls, k: int) -> "Partition":
        return cls(k, tuple((i,) for i in range(1, k + 1)))

    @classmethod
    def full(cls, k: int) -> "Partition":
        return cls(k, (tuple(range(1, k + 1)),))

    def __len__(self) -> int:
        return len(self.blocks)

    def __str__(self) -> str:
        sep = "" if self.k <= 9 else ","
        return "|".join(sep.join(str(x) for x in b) for b in self.blocks)

    def block_of(self, i: int) -> tuple[int, ...]:
        for b in self.blocks:
            if i in b:
                return b
        raise IndexError(f"{i} not in 1..{self.k}")

    def labels(self) -> tuple[int, ...]:
        """Restricted growth string: block index (0-based) of each element."""
        lab = [0] * self.k
        for n, b in enumerate(self.blocks):
            for x in b:
                lab[x - 1] = n
        return tuple(lab)

    def relabel(self, mapping) -> "Partition":
        """Image under a permutation ``i -> mapping(i)`` of ``1..k``."""
        return Partition(self.k, tuple(tuple(mapping(x) for x in b) for b in self.blocks))


@dataclass(frozen=True)
class NonCrossingGraph:
    """Graph on vertices ``1..k`` without crossing edges."""

    k: int
    edges: frozenset

    def __post_init__(self):
        edges = frozenset((min(e), max(e)) for e in self.edges)
        for i, j in edges:
            if not (1 <= i < j <= self.k):
                raise ValueError(f"bad edge {(i, j)} for k={self.k}")
        for e, f in combinations(edges, 2):
            if _edges_cross(e, f):
                raise DomainError(f"edges {e} and {f} cross")
        object.__setattr__(self, "edges", edges)


def _edges_cross(e, f) -> bool:
    (a, b), (c, d) = sorted((e, f))
    return a < c < b < d


def catalan(n: int) -> int:
    """Catalan number ``C_n = binom(2n, n) / (n + 1)``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > CATALAN_MAX:
        raise SizeLimitError(f"catalan({n}) above guard n <= {CATALAN_MAX}")
    return math.comb(2 * n, n) // (n + 1)


def _blocks_cross(b1: Sequence[int], b2: Sequence[int]) -> bool:
    for a, b in combinations(b1, 2):
        inside = [c for c in b2 if a < c < b]
        if inside and len(inside) < len(b2):
            return True
    return False


def is_noncrossing(p: Partition) -> bool:
    """True iff no ``a < c < b < d`` has ``a, b`` and ``c, d`` in different blocks."""
    return not any(_blocks_cross(b1, b2) for b1, b2 in combinations(p.blocks, 2))


def _nc_blocks(elems: tuple[int, ...]):
    """All non-crossing partitions of the ordered tuple ``elems`` (as block lists)."""
    if not elems:
        yield []
        return
    first, rest = elems[0], elems[1:]
    n = len(rest)
    # the block of ``first`` picks positions in ``rest``; the gaps it leaves are
    # filled independently, which is exactly the non-crossing condition
    for r in range(n + 1):
        for picks in combinations(range(n), r):
            block = (first,) + tuple(rest[i] for i in picks)
            bounds = (-1,) + picks + (n,)
            gaps = [rest[bounds[i] + 1:bounds[i + 1]] for i in range(len(bounds) - 1)]
            yield from _fill_gaps(block, gaps)


def _fill_gaps(block, gaps):
    if not gaps:
        yield [block]
        return
    for head in _nc_blocks(gaps[0]):
        for tail in _fill_gaps(block, gaps[1:]):
            yield head + tail


@lru_cache(maxsize=None)
def _ncp_cached(k: int) -> tuple[Partition, ...]:
    parts = {Partition(k, tuple(bl)) for bl in _nc_blocks(tuple(range(1, k + 1)))}
    return tuple(sorted(parts, key=Partition.labels))


def enumerate_ncp(k: int, k_max: int = K_MAX) -> tuple[Partition, ...]:
    """All non-crossing partitions of ``[k]``, ordered by restricted growth string."""
    if not 1 <= k <= k_max:
        raise SizeLimitError(f"enumerate_ncp requires 1 <= k <= {k_max}, got {k}")
    return _ncp_cached(k)


def enumerate_all_partitions(k: int) -> list[Partition]:
    """Every set partition of ``[k]`` (Bell-many); used as a brute-force oracle."""
    out = []

    def rec(i, labels, nblocks):
        if i == k:
            blocks = [[] for _ in range(nblocks)]
            for x, lab in enumerate(labels, start=1):
                blocks[lab].append(x)
            out.append(Partition(k, tuple(tuple(b) for b in blocks)))
            return
        for lab in range(nblocks + 1):
            rec(i + 1, labels + [lab], max(nblocks, lab + 1))

    rec(0, [], 0)
    return out


@lru_cache(maxsize=4096)
def kreweras(p: Partition) -> Partition:
    """Kreweras complement of a non-crossing partition.

    The copies ``1', ..., k'`` sit on the circle ``1, 1', 2, 2', ..., k, k'``.
    Two copies ``i' < j'`` may share a block exactly when no block of ``p``
    straddles the arc ``i+1..j`` between them; the complement is the
    coarsest partition generated by these pairs.
    """
    if not is_noncrossing(p):
        raise DomainError(f"kreweras complement needs a non-crossing partition, got {p}")
    k = p.k
    label = p.labels()
    parent = list(range(k + 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(1, k + 1):
        for j in range(i + 1, k + 1):
            inside = set(label[i:j])  # elements i+1..j
            outside = set(label[:i]) | set(label[j:])
            if not inside & outside:
                parent[find(j)] = find(i)
    groups: dict[int, list[int]] = {}
    for i in range(1, k + 1):
        groups.setdefault(find(i), []).append(i)
    return Partition(k, tuple(tuple(g) for g in groups.values()))


@lru_cache(maxsize=None)
def _ncg_cached(k: int) -> tuple[NonCrossingGraph, ...]:
    all_edges = list(combinations(range(1, k + 1), 2))
    out = []

    def rec(idx, chosen):
        if idx == len(all_edges):
            out.append(NonCrossingGraph(k, frozenset(chosen)))
            return
        rec(idx + 1, chosen)
        e = all_edges[idx]
        if not any(_edges_cross(e, f) for f in chosen):
            rec(idx + 1, chosen + [e])

    rec(0, [])
    return tuple(out)


def enumerate_ncg(k: int, k_max: int = NCG_K_MAX) -> tuple[NonCrossingGraph, ...]:
    """All non-crossing graphs on ``[k]`` in a fixed backtracking order."""
    if not 1 <= k <= k_max:
        raise SizeLimitError(f"enumerate_ncg requires 1 <= k <= {k_max}, got {k}")
    return _ncg_cached(k)


def connected_components(g: NonCrossingGraph) -> Partition:
    parent = list(range(g.k + 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in g.edges:
        parent[find(j)] = find(i)
    groups: dict[int, list[int]] = {}
    for i in range(1, g.k + 1):
        groups.setdefault(find(i), []).append(i)
    return Partition(g.k, tuple(tuple(v) for v in groups.values()))
