"""Semicircle analytics: Stieltjes transform, divided differences, free cumulants.

All integrals against the semicircle density are computed after the
substitution ``x = 2 cos(theta)``, which turns ``rho_sc(x) dx`` into the
smooth weight ``(2/pi) sin(theta)**2 dtheta`` on ``[0, pi]``; the remaining
integral is done with composite Gauss-Legendre panels, doubling the panel
count until two successive estimates agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Callable, Hashable, Sequence

import numpy as np

from .ncpart import K_MAX, DomainError, SizeLimitError, catalan, enumerate_ncp, kreweras

__all__ = [
    "SemicircleConfig",
    "DEFAULT_CONFIG",
    "SpectralKernel",
    "FunctionKernel",
    "QuadratureError",
    "stieltjes",
    "stieltjes_taylor",
    "rho",
    "semicircle_integral",
    "divided_difference",
    "divided_difference_recursive",
    "divided_difference_quadrature",
    "sc_moment",
    "free_cumulant",
    "free_cumulant_moebius",
    "CumulantTable",
    "phi",
    "sc_function_moment",
]

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SemicircleConfig:
    """Numerical tolerances for the semicircle routines.

    ``quad_rtol`` is the agreement required between two successive
    panel doublings.  The recursive divided-difference route is taken when
    the smallest gap between distinct nodes is at least ``dd_tau * eta`` and
    the predicted cancellation error stays below ``dd_target_rtol``.
    """

    quad_rtol: float = 1e-10
    quad_points: int = 16
    quad_max_level: int = 15
    dd_tau: float = 1e-3
    dd_target_rtol: float = 1e-11


DEFAULT_CONFIG = SemicircleConfig()


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class SpectralKernel:
    """``x -> 1/(x - z)`` (``kind='resolvent'``) or ``x -> 1/|x - z|`` (``'absolute'``)."""

    kind: str
    z: complex

    def __post_init__(self):
        if self.kind not in ("resolvent", "absolute"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        object.__setattr__(self, "z", complex(self.z))
        if self.z.imag == 0:
            raise DomainError(f"spectral parameter {self.z} must have Im z != 0")

    @classmethod
    def resolvent(cls, z) -> "SpectralKernel":
        return cls("resolvent", z)

    @classmethod
    def absolute(cls, z) -> "SpectralKernel":
        return cls("absolute", z)

    @property
    def eta(self) -> float:
        return abs(self.z.imag)

    def __call__(self, x):
        if self.kind == "resolvent":
            return 1.0 / (x - self.z)
        return 1.0 / np.abs(x - self.z)


@dataclass(frozen=True)
class FunctionKernel:
    """A bounded test function on the spectrum with a declared Sobolev order."""

    evaluator: Callable = field(compare=False)
    smoothness_order: int = 2
    name: str = ""

    def __call__(self, x):
        out = self.evaluator(x)
        return np.broadcast_to(out, np.shape(x)) if np.ndim(out) == 0 else out


def stieltjes(z):
    """Stieltjes transform ``m_sc(z)`` of the semicircle law.

    Solves ``m**2 + z*m + 1 = 0`` on the branch with ``Im m * Im z > 0``.
    Accepts scalars or arrays; real ``z`` must satisfy ``|z| > 2``.
    """
    za = np.asarray(z, dtype=complex)
    bad = (za.imag == 0) & (np.abs(za.real) <= 2)
    if np.any(bad):
        raise DomainError(f"m_sc is not defined on the cut [-2, 2]: {z}")
    s = np.sqrt(za - 2) * np.sqrt(za + 2)
    # the product of the two roots is 1; dividing avoids cancellation for large |z|
    m = -2.0 / (za + s)
    return m[()] if m.ndim == 0 else m


def stieltjes_taylor(z: complex, order: int) -> np.ndarray:
    """Taylor coefficients ``m^(n)(z) / n!`` for ``n = 0..order``.

    Obtained by matching powers of ``t`` in ``m(z+t)**2 + (z+t) m(z+t) + 1 = 0``.
    """
    c = np.zeros(order + 1, dtype=complex)
    c[0] = stieltjes(z)
    denom = 2 * c[0] + z
    for n in range(1, order + 1):
        conv = sum(c[i] * c[n - i] for i in range(1, n))
        c[n] = -(c[n - 1] + conv) / denom
    return c


def rho(x):
    """Semicircle density ``sqrt(4 - x**2) / (2 pi)``, zero off ``[-2, 2]``."""
    xa = np.asarray(x, dtype=float)
    out = np.sqrt(np.clip(4.0 - xa * xa, 0.0, None)) / (2 * np.pi)
    return out[()] if out.ndim == 0 else out


@lru_cache(maxsize=64)
def _panel_rule(points: int, panels: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(points)
    edges = np.linspace(0.0, np.pi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    theta = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    x = 2.0 * np.cos(theta)
    wx = weights * (2.0 / np.pi) * np.sin(theta) ** 2
    x.setflags(write=False)
    wx.setflags(write=False)
    return x, wx


def semicircle_integral(f: Callable, config: SemicircleConfig = DEFAULT_CONFIG) -> complex:
    """``int rho_sc(x) f(x) dx`` for a vectorised ``f``.

    Stops once two successive panel doublings agree to ``config.quad_rtol``
    relative to ``int rho_sc |f|``.
    """
    prev = None
    for level in range(config.quad_max_level + 1):
        x, w = _panel_rule(config.quad_points, 2 ** level)
        fx = f(x)
        val = complex(np.dot(w, fx))
        if prev is not None:
            scale = float(np.dot(w, np.abs(fx)))
            if abs(val - prev) <= config.quad_rtol * max(abs(val), 1e-3 * scale, 1e-300):
                return val
        prev = val
    raise QuadratureError(
        f"semicircle quadrature did not converge to rtol={config.quad_rtol} "
        f"with {config.quad_points * 2 ** config.quad_max_level} nodes"
    )


def _dist_to_cut(z: complex) -> float:
    x = min(max(z.real, -2.0), 2.0)
    return abs(z - x)


def _group_nodes(zs: Sequence[complex]) -> list[tuple[complex, int]]:
    groups: dict[complex, int] = {}
    for z in zs:
        groups[z] = groups.get(z, 0) + 1
    return list(groups.items())


def divided_difference_recursive(zs: Sequence[complex]) -> complex:
    """Newton table for ``m_sc[z_1, ..., z_n]``; repeated nodes use Taylor data."""
    groups = _group_nodes([complex(z) for z in zs])
    nodes: list[complex] = []
    taylor: dict[complex, np.ndarray] = {}
    for z, mult in groups:
        nodes.extend([z] * mult)
        taylor[z] = stieltjes_taylor(z, mult - 1)
    n = len(nodes)
    col = [taylor[z][0] for z in nodes]
    for j in range(1, n):
        new = []
        for i in range(n - j):
            a, b = nodes[i], nodes[i + j]
            if a == b:
                new.append(taylor[a][j])
            else:
                new.append((col[i + 1] - col[i]) / (b - a))
        col = new
    return complex(col[0])


def divided_difference_quadrature(zs: Sequence[complex], config: SemicircleConfig = DEFAULT_CONFIG) -> complex:
    """``int rho_sc(x) prod_i 1/(x - z_i) dx`` by quadrature."""
    zarr = np.asarray(zs, dtype=complex)

    def f(x):
        return np.prod(1.0 / (x[None, :] - zarr[:, None]), axis=0)

    return semicircle_integral(f, config)


def _recursion_is_safe(zs: Sequence[complex], config: SemicircleConfig) -> bool:
    distinct = [z for z, _ in _group_nodes(zs)]
    n = len(zs)
    if len(distinct) < 2:
        return True
    gap = min(abs(a - b) for a, b in combinations(distinct, 2))
    eta = min(abs(z.imag) for z in zs)
    scale = min(_dist_to_cut(z) for z in zs)
    if gap < config.dd_tau * eta:
        return False
    # each Newton level divides a rounding error by the gap; the true value
    # lives on the scale of the distance to the cut
    predicted = _EPS * (2.0 * scale / gap) ** (n - 1)
    return predicted <= config.dd_target_rtol


def divided_difference(zs: Sequence[complex], config: SemicircleConfig = DEFAULT_CONFIG) -> complex:
    """Iterated divided difference ``m_sc[z_1, ..., z_n]``.

    Uses the Newton recursion (confluent nodes through exact Taylor
    coefficients) when the nodes are far enough apart, otherwise the
    integral representation against the semicircle density.
    """
    zs = [complex(z) for z in zs]
    if not zs:
        raise ValueError("divided_difference needs at least one node")
    for z in zs:
        if z.imag == 0:
            raise DomainError(f"spectral parameter {z} must have Im z != 0")
    if len(zs) == 1:
        return complex(stieltjes(zs[0]))
    if _recursion_is_safe(zs, config):
        return divided_difference_recursive(zs)
    return divided_difference_quadrature(zs, config)


def sc_moment(kernels: Sequence[SpectralKernel], config: SemicircleConfig = DEFAULT_CONFIG) -> complex:
    """``<g_1 ... g_n>_sc``; all-resolvent products reduce to divided differences."""
    if not kernels:
        raise ValueError("sc_moment needs at least one kernel")
    if all(g.kind == "resolvent" for g in kernels):
        return divided_difference([g.z for g in kernels], config)
    zs = np.array([g.z for g in kernels])
    absolute = np.array([g.kind == "absolute" for g in kernels])

    def f(x):
        d = x[None, :] - zs[:, None]
        d = np.where(absolute[:, None], np.abs(d), d)
        return np.prod(1.0 / d, axis=0)

    return semicircle_integral(f, config)


class CumulantTable:
    """Memoised free cumulants of a moment function on subsets of an ordered ground set.

    ``moment_fn`` receives a sorted tuple of indices and returns ``m[B]``.
    Cumulants are obtained from
    ``m[B] = sum_{pi in NCP(B)} prod_{B' in pi} m_o[B']``
    by subtracting all partitions with at least two blocks.
    """

    def __init__(self, moment_fn: Callable[[tuple], complex], k_max: int = K_MAX):
        self.moment_fn = moment_fn
        self.k_max = k_max
        self._moments: dict[tuple, complex] = {}
        self._cumulants: dict[tuple, complex] = {}

    def moment(self, block: tuple) -> complex:
        block = tuple(sorted(block))
        if block not in self._moments:
            self._moments[block] = complex(self.moment_fn(block))
        return self._moments[block]

    def __getitem__(self, block) -> complex:
        block = tuple(sorted(block))
        hit = self._cumulants.get(block)
        if hit is not None:
            return hit
        n = len(block)
        if n > self.k_max:
            raise SizeLimitError(f"free cumulant of a block of size {n} > {self.k_max}")
        val = self.moment(block)
        for pi in enumerate_ncp(n, self.k_max):
            if len(pi) < 2:
                continue
            prod = 1.0 + 0j
            for b in pi.blocks:
                prod *= self[tuple(block[i - 1] for i in b)]
            val -= prod
        self._cumulants[block] = val
        return val


def free_cumulant(moment_fn: Callable[[tuple], complex], B: Sequence[Hashable], k_max: int = K_MAX) -> complex:
    """Free cumulant ``m_o[B]`` of ``moment_fn`` by the defining recursion."""
    return CumulantTable(moment_fn, k_max)[tuple(B)]


def free_cumulant_moebius(moment_fn: Callable[[tuple], complex], B: Sequence[Hashable], k_max: int = K_MAX) -> complex:
    """Free cumulant via Moebius inversion on the non-crossing lattice.

    ``m_o[B] = sum_pi (-1)**(|pi|-1) prod_{S in K(pi)} C_{|S|-1} prod_{T in pi} m[T]``
    """
    block = tuple(sorted(B))
    n = len(block)
    if n > k_max:
        raise SizeLimitError(f"free cumulant of a block of size {n} > {k_max}")
    cache: dict[tuple, complex] = {}

    def m(T):
        T = tuple(block[i - 1] for i in T)
        if T not in cache:
            cache[T] = complex(moment_fn(T))
        return cache[T]

    total = 0j
    for pi in enumerate_ncp(n, k_max):
        coeff = (-1) ** (len(pi) - 1)
        for S in kreweras(pi).blocks:
            coeff *= catalan(len(S) - 1)
        term = complex(coeff)
        for T in pi.blocks:
            term *= m(T)
        total += term
    return total


def phi(s: float, config: SemicircleConfig = DEFAULT_CONFIG) -> float:
    """``int e^{isx} rho_sc(x) dx`` (real by symmetry), by quadrature."""
    if s < 0:
        raise ValueError("phi is defined for s >= 0")
    if s == 0:
        return 1.0
    return semicircle_integral(lambda x: np.cos(s * x), config).real


def sc_function_moment(fns: Sequence[Callable], config: SemicircleConfig = DEFAULT_CONFIG) -> complex:
    """``<f_1 ... f_n>_sc`` by quadrature."""
    if not fns:
        raise ValueError("sc_function_moment needs at least one function")

    def f(x):
        out = np.ones_like(x, dtype=complex)
        for g in fns:
            out = out * g(x)
        return out

    return semicircle_integral(f, config)
