"""Deterministic approximation ``M(z_1, B_1, ..., B_{k-1}, z_k)`` of resolvent chains.

``M`` is the sum over non-crossing partitions ``pi`` of ``[k]`` of the
partial trace over the Kreweras complement ``K(pi)`` times the product of
free cumulants of the semicircle moments over the blocks of ``pi``.
Matrix indices are 1-based throughout to match the chain positions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ncpart import (
    K_MAX,
    DomainError,
    Partition,
    SizeLimitError,
    connected_components,
    enumerate_ncg,
    enumerate_ncp,
    kreweras,
)
from .semicircle import (
    DEFAULT_CONFIG,
    CumulantTable,
    SemicircleConfig,
    SpectralKernel,
    sc_function_moment,
    sc_moment,
    stieltjes,
)

__all__ = [
    "TRACELESS_TOL",
    "ConditioningError",
    "ChainSpec",
    "ChainValue",
    "ptr",
    "m_matrix",
    "m_matrix_raw",
    "m_avg",
    "m_matrix_q",
    "recursion_residual",
    "m_bound",
    "sc_chain_value",
    "chain_to_dict",
    "chain_from_dict",
]

TRACELESS_TOL = 1e-12


class ConditioningError(ArithmeticError):
    """A formula was evaluated too close to one of its singularities."""


def _ntrace(x: np.ndarray) -> complex:
    return complex(np.trace(x)) / x.shape[0]


def _norm_lower_bound(b: np.ndarray, iters: int = 12) -> float:
    """Power-iteration estimate of ``||b||`` (never above the true norm)."""
    if b.shape[0] <= 64:
        return float(np.linalg.norm(b, 2))
    v = np.random.default_rng(0).standard_normal(b.shape[0])
    est = 0.0
    for _ in range(iters):
        w = b @ v
        est = float(np.linalg.norm(w) / np.linalg.norm(v))
        v = b.conj().T @ w
        if not np.any(v):
            break
    return est


@dataclass(frozen=True)
class ChainSpec:
    """Kernels and deterministic matrices of a resolvent chain.

    ``form='averaged'`` describes ``<G_1 B_1 ... G_k B_k>`` (k kernels,
    k matrices); ``form='isotropic'`` describes ``G_1 B_1 ... B_k G_{k+1}``
    (k+1 kernels, k matrices).
    """

    kernels: tuple
    matrices: tuple
    form: str = "averaged"
    traceless_flags: tuple | None = None
    matrix_refs: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        kernels = tuple(
            g if isinstance(g, SpectralKernel) else SpectralKernel.resolvent(g) for g in self.kernels
        )
        object.__setattr__(self, "kernels", kernels)
        mats = tuple(np.asarray(b, dtype=complex if np.iscomplexobj(b) else float) for b in self.matrices)
        object.__setattr__(self, "matrices", mats)
        if self.form not in ("averaged", "isotropic"):
            raise ValueError(f"unknown chain form {self.form!r}")
        if not kernels:
            raise ValueError("a chain needs at least one kernel")
        want = len(kernels) if self.form == "averaged" else len(kernels) - 1
        if len(mats) != want:
            raise ValueError(f"{self.form} chain with {len(kernels)} kernels needs {want} matrices, got {len(mats)}")
        shapes = {b.shape for b in mats}
        if len(shapes) > 1 or any(len(s) != 2 or s[0] != s[1] for s in shapes):
            raise ValueError(f"matrices must be square and of equal size, got {shapes}")
        detected = tuple(abs(_ntrace(b)) < TRACELESS_TOL for b in mats)
        if self.traceless_flags is None:
            object.__setattr__(self, "traceless_flags", detected)
        else:
            flags = tuple(bool(f) for f in self.traceless_flags)
            if len(flags) != len(mats):
                raise ValueError("one traceless flag per matrix")
            for i, (f, d) in enumerate(zip(flags, detected)):
                if f and not d:
                    raise ValueError(f"matrix B_{i + 1} flagged traceless but |<B>| = {abs(_ntrace(mats[i])):.3g}")
            object.__setattr__(self, "traceless_flags", flags)
        for i, b in enumerate(mats):
            nrm = _norm_lower_bound(b)
            if nrm > 1 + 1e-9:
                warnings.warn(f"||B_{i + 1}|| = {nrm:.3g} exceeds 1", stacklevel=3)

    @property
    def k(self) -> int:
        """Number of deterministic matrices."""
        return len(self.matrices)

    @property
    def N(self) -> int | None:
        return self.matrices[0].shape[0] if self.matrices else None

    @property
    def a(self) -> int:
        return sum(self.traceless_flags)

    @property
    def eta(self) -> float:
        return min(g.eta for g in self.kernels)

    @property
    def zs(self) -> list[complex]:
        return [g.z for g in self.kernels]

    def m_matrices(self) -> tuple:
        """Matrices sitting between the kernels of ``M``."""
        return self.matrices[:-1] if self.form == "averaged" else self.matrices


@dataclass
class ChainValue:
    """``M`` (matrix or scalar) together with its per-partition terms."""

    matrix_part: object
    decomposition: list = field(default_factory=list)

    def resum(self):
        return sum(term * coeff for _, coeff, term in self.decomposition)


class _Products:
    """Memoised ordered products and normalised traces of chain matrices."""

    def __init__(self, matrices: Sequence[np.ndarray], n: int):
        self.matrices = list(matrices)
        self.n = n
        self._prod: dict[tuple, np.ndarray] = {}
        self._tr: dict[tuple, complex] = {}

    def product(self, idx: tuple) -> np.ndarray:
        if not idx:
            return np.eye(self.n)
        hit = self._prod.get(idx)
        if hit is None:
            hit = self.matrices[idx[0] - 1] if len(idx) == 1 else self.product(idx[:-1]) @ self.matrices[idx[-1] - 1]
            self._prod[idx] = hit
        return hit

    def trace(self, idx: tuple) -> complex:
        hit = self._tr.get(idx)
        if hit is None:
            if len(idx) == 1:
                hit = _ntrace(self.matrices[idx[0] - 1])
            else:
                # <XY> without forming XY
                left = self.product(idx[:-1])
                hit = complex(np.sum(left * self.matrices[idx[-1] - 1].T)) / self.n
            self._tr[idx] = hit
        return hit


def _ptr(pi: Partition, prods: _Products) -> np.ndarray:
    k = pi.k
    scalar = 1.0 + 0j
    last = ()
    for b in pi.blocks:
        if k in b:
            last = tuple(j for j in b if j != k)
        else:
            scalar *= prods.trace(b)
    return scalar * prods.product(last)


def _ptr_traced(pi: Partition, prods: _Products) -> complex:
    """``prod_{S in pi} <prod_{j in S} B_j>`` with ``B_k`` included."""
    out = 1.0 + 0j
    for b in pi.blocks:
        out *= prods.trace(b)
    return out


def ptr(pi: Partition, matrices: Sequence[np.ndarray], k: int | None = None, n: int | None = None) -> np.ndarray:
    """Partial trace ``pTr_pi(B_1, ..., B_{k-1})``.

    Blocks not containing ``k`` contribute the normalised trace of their
    ordered product; the block of ``k`` contributes the ordered matrix
    product of its remaining indices.
    """
    k = pi.k if k is None else k
    if pi.k != k:
        raise ValueError(f"partition over [{pi.k}] used with k={k}")
    if len(matrices) != k - 1:
        raise IndexError(f"pTr over [{k}] takes {k - 1} matrices, got {len(matrices)}")
    if n is None:
        if not matrices:
            raise ValueError("dimension n required when there are no matrices")
        n = matrices[0].shape[0]
    return _ptr(pi, _Products(matrices, n))


def _kernel_cumulants(kernels: Sequence[SpectralKernel], config: SemicircleConfig) -> CumulantTable:
    return CumulantTable(lambda block: sc_moment([kernels[i - 1] for i in block], config))


def _nc_sum(k: int, cumulants: CumulantTable, matrices, n: int, averaged: bool) -> ChainValue:
    if k > K_MAX:
        raise SizeLimitError(f"chain length {k} above K_MAX={K_MAX}")
    prods = _Products(matrices, n)
    decomposition = []
    total = 0j if averaged else np.zeros((n, n), dtype=complex)
    for pi in enumerate_ncp(k):
        coeff = 1.0 + 0j
        for b in pi.blocks:
            coeff *= cumulants[b]
        kpi = kreweras(pi)
        term = _ptr_traced(kpi, prods) if averaged else _ptr(kpi, prods)
        decomposition.append((pi, coeff, term))
        total = total + coeff * term
    return ChainValue(total, decomposition)


def m_matrix_raw(kernels: Sequence, matrices: Sequence[np.ndarray], n: int | None = None,
                 config: SemicircleConfig = DEFAULT_CONFIG) -> ChainValue:
    """``M(g_1, B_1, ..., B_{k-1}, g_k)`` for explicit kernel and matrix lists."""
    kernels = [g if isinstance(g, SpectralKernel) else SpectralKernel.resolvent(g) for g in kernels]
    if len(matrices) != len(kernels) - 1:
        raise ValueError(f"{len(kernels)} kernels need {len(kernels) - 1} matrices")
    if n is None:
        if not matrices:
            raise ValueError("dimension n required for a single-kernel chain")
        n = matrices[0].shape[0]
    return _nc_sum(len(kernels), _kernel_cumulants(kernels, config), matrices, n, averaged=False)


def m_matrix(chain: ChainSpec, config: SemicircleConfig = DEFAULT_CONFIG) -> ChainValue:
    """Matrix ``M`` of the chain: ``M(z_1, B_1, ..., B_k, z_{k+1})`` for the
    isotropic form, ``M(z_1, B_1, ..., B_{k-1}, z_k)`` for the averaged form."""
    return m_matrix_raw(chain.kernels, chain.m_matrices(), chain.N, config)


def m_avg(chain: ChainSpec, config: SemicircleConfig = DEFAULT_CONFIG) -> complex:
    """``<M(z_1, B_1, ..., B_{k-1}, z_k) B_k>`` for an averaged chain."""
    if chain.form != "averaged":
        raise ValueError("m_avg needs an averaged chain")
    value = _nc_sum(len(chain.kernels), _kernel_cumulants(chain.kernels, config), chain.matrices,
                    chain.N, averaged=True)
    return complex(value.matrix_part)


def _q_partition_weights(ms: np.ndarray) -> dict[Partition, complex]:
    k = len(ms)
    q = {}
    for i in range(k):
        for j in range(i + 1, k):
            denom = 1 - ms[i] * ms[j]
            if abs(denom) <= 1e-8:
                raise ConditioningError(f"1 - m_{i + 1} m_{j + 1} = {denom:.3g} is near singular")
            q[(i + 1, j + 1)] = ms[i] * ms[j] / denom
    weights: dict[Partition, complex] = {}
    for g in enumerate_ncg(k):
        w = 1.0 + 0j
        for e in g.edges:
            w *= q[e]
        pi = connected_components(g)
        weights[pi] = weights.get(pi, 0j) + w
    return weights


def m_matrix_q(chain: ChainSpec) -> ChainValue:
    """``M`` through the sum over non-crossing graphs.

    ``M / (m_1 ... m_k) = sum_E pTr_{K(pi(E))} prod_{(ij) in E} q_ij`` with
    ``q_ij = m_i m_j / (1 - m_i m_j)``.  Graphs with the same connected
    components are summed before the matrix products are formed.
    """
    if any(g.kind != "resolvent" for g in chain.kernels):
        raise DomainError("the graph formula needs resolvent kernels only")
    ms = np.array([stieltjes(g.z) for g in chain.kernels])
    mats = chain.m_matrices()
    prods = _Products(mats, chain.N)
    pref = complex(np.prod(ms))
    decomposition = []
    total = np.zeros((chain.N, chain.N), dtype=complex)
    for pi, w in sorted(_q_partition_weights(ms).items(), key=lambda kv: kv[0].labels()):
        term = _ptr(kreweras(pi), prods)
        decomposition.append((pi, pref * w, term))
        total += pref * w * term
    return ChainValue(total, decomposition)


def _M(zs, mats, n, config) -> np.ndarray:
    return m_matrix_raw(list(zs), list(mats), n, config).matrix_part


def _recursion_sides(zs, A, j, variant, n, config):
    k = len(zs)
    z = lambda a, b: list(zs[a - 1:b])  # noqa: E731  z_a..z_b inclusive
    Am = lambda a, b: list(A[a - 1:b])  # noqa: E731  A_a..A_b inclusive
    eye = np.eye(n)
    mj = complex(stieltjes(zs[j - 1]))
    lhs = _M(zs, A, n, config)

    if k == 1:
        first = eye * 1.0
    elif j == 1:
        first = A[0] @ _M(z(2, k), Am(2, k - 1), n, config)
    elif j == k:
        first = _M(z(1, k - 1), Am(1, k - 2), n, config) @ A[k - 2]
    else:
        merged = Am(1, j - 2) + [A[j - 2] @ A[j - 1]] + Am(j + 1, k - 1)
        first = _M(z(1, j - 1) + z(j + 1, k), merged, n, config)
    rhs = first.astype(complex)

    for l in range(1, j):
        if variant == "rec1":
            mat = _M(z(1, l) + z(j, k), Am(1, l - 1) + [eye] + Am(j, k - 1), n, config)
            scal = _ntrace(_M(z(l, j - 1), Am(l, j - 2), n, config) @ A[j - 2])
        else:
            mat = _M(z(1, l) + z(j + 1, k), Am(1, l - 1) + Am(j, k - 1), n, config)
            scal = _ntrace(_M(z(l, j), Am(l, j - 1), n, config))
        rhs = rhs + mat * scal
    for l in range(j + 1, k + 1):
        if variant == "rec1":
            mat = _M(z(1, j - 1) + z(l, k), Am(1, j - 1) + Am(l, k - 1), n, config)
            scal = _ntrace(_M(z(j, l), Am(j, l - 1), n, config))
        else:
            mat = _M(z(1, j) + z(l, k), Am(1, j - 1) + [eye] + Am(l, k - 1), n, config)
            # cyclic rotation of <A_j G_{j+1} ... A_{l-1} G_l>
            scal = _ntrace(_M(z(l, l) + z(j + 1, l - 1), Am(j, l - 2), n, config) @ A[l - 2])
        rhs = rhs + mat * scal
    return lhs, mj * rhs


def recursion_residual(chain: ChainSpec, j: int, variant: str = "rec1",
                       config: SemicircleConfig = DEFAULT_CONFIG) -> float:
    """Relative Frobenius residual of the recursion for ``M`` at position ``j``.

    ``rec1`` expands the ``j``-th resolvent towards the left neighbours,
    ``rec2`` towards the right ones; both are exact identities.
    """
    if variant not in ("rec1", "rec2"):
        raise ValueError(f"unknown recursion variant {variant!r}")
    k = len(chain.kernels)
    if not 1 <= j <= k:
        raise IndexError(f"position j={j} outside 1..{k}")
    lhs, rhs = _recursion_sides(chain.zs, chain.m_matrices(), j, variant, chain.N, config)
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))


def _dist_to_cut(z: complex) -> float:
    return abs(z - min(max(z.real, -2.0), 2.0))


def m_bound(chain: ChainSpec) -> float:
    """Size ceiling for ``M`` with ``a`` traceless matrices out of ``k``.

    Norm form (isotropic chains): ``eta^-(k - ceil(a/2))`` for ``d <= 1`` and
    ``d^-(k+1)`` otherwise; averaged form: ``eta^-(k - 1 - ceil(a/2))`` and ``d^-k``.
    """
    k, a = chain.k, chain.a
    d = min(_dist_to_cut(z) for z in chain.zs)
    eta = chain.eta
    half = math.ceil(a / 2)
    if chain.form == "isotropic":
        return eta ** -(k - half) if d <= 1 else d ** -(k + 1)
    return eta ** -(k - 1 - half) if d <= 1 else d ** -k


def sc_chain_value(fns: Sequence, matrices: Sequence[np.ndarray], form: str = "averaged",
                   n: int | None = None, config: SemicircleConfig = DEFAULT_CONFIG):
    """Deterministic term for ``<f_1(W) B_1 ... f_k(W) B_k>`` (averaged, k matrices)
    or the matrix ``f_1(W) B_1 ... B_{k-1} f_k(W)`` (isotropic, k-1 matrices)."""
    k = len(fns)
    want = k if form == "averaged" else k - 1
    if len(matrices) != want:
        raise ValueError(f"{form} form with {k} functions needs {want} matrices")
    if n is None:
        if not matrices:
            raise ValueError("dimension n required")
        n = matrices[0].shape[0]
    cum = CumulantTable(lambda block: sc_function_moment([fns[i - 1] for i in block], config))
    value = _nc_sum(k, cum, list(matrices), n, averaged=(form == "averaged"))
    return value.matrix_part


def chain_to_dict(chain: ChainSpec) -> dict:
    """JSON-ready description; matrices only by generator reference."""
    if chain.matrix_refs is None:
        raise ValueError("chain has no generator references for its matrices")
    return {
        "form": chain.form,
        "N": chain.N,
        "kernels": [{"kind": g.kind, "re": g.z.real, "im": g.z.imag} for g in chain.kernels],
        "matrices": [dict(r) for r in chain.matrix_refs],
        "traceless_flags": list(chain.traceless_flags),
    }


def chain_from_dict(doc: dict) -> ChainSpec:
    from .ensemble import matrix_from_ref

    n = int(doc["N"])
    kernels = [SpectralKernel(g["kind"], complex(g["re"], g["im"])) for g in doc["kernels"]]
    refs = tuple(dict(r) for r in doc["matrices"])
    mats = [matrix_from_ref(n, r) for r in refs]
    return ChainSpec(tuple(kernels), tuple(mats), doc.get("form", "averaged"),
                     tuple(doc["traceless_flags"]) if "traceless_flags" in doc else None, refs)
