"""Wigner matrix samples and random resolvent chains.

Every sample keeps one eigendecomposition, which is reused for all spectral
parameters, kernels, test functions and evolution times evaluated on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import quad_vec

from .mchain import ChainSpec, ConditioningError, m_avg, m_matrix
from .ncpart import DomainError
from .semicircle import SpectralKernel, stieltjes

__all__ = [
    "DISTRIBUTIONS",
    "RECIPES",
    "Z_MAX",
    "ETA_FLOOR",
    "WignerSample",
    "ObservableSet",
    "derive_seed",
    "sample_wigner",
    "make_observables",
    "matrix_from_ref",
    "chain_avg",
    "chain_iso",
    "psi_av",
    "psi_iso",
    "heisenberg_pair",
    "fw_chain",
    "abs_resolvent_direct",
    "contour_resolvent_product",
]

DISTRIBUTIONS = ("gaussian", "rademacher", "uniform")
RECIPES = (
    "random-hermitian-traceless",
    "signed-projection-traceless",
    "random-hermitian",
    "identity",
    "identity-plus-traceless",
    "random-unit-vectors",
)
Z_MAX = 1e6
# the spectrum has width ~4; resolvents closer than ~1e3 ulp to it are noise
ETA_FLOOR = 1e3 * np.finfo(float).eps * 4


def derive_seed(base_seed: int, *keys: int) -> int:
    """Independent 64-bit seed for ``keys`` (e.g. grid point and trial index)."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _standardized(rng: np.random.Generator, distribution: str, shape) -> np.ndarray:
    if distribution == "gaussian":
        return rng.standard_normal(shape)
    if distribution == "rademacher":
        return rng.integers(0, 2, size=shape) * 2.0 - 1.0
    if distribution == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=shape)
    raise ValueError(f"unsupported entry distribution {distribution!r}; choose from {DISTRIBUTIONS}")


@dataclass
class WignerSample:
    """One Wigner matrix with its (lazily computed) eigendecomposition."""

    N: int
    beta: int
    distribution: str
    seed: int
    W: np.ndarray
    _eigen: tuple | None = field(default=None, repr=False)
    _rotated: dict = field(default_factory=dict, repr=False)

    @property
    def eigen(self) -> tuple[np.ndarray, np.ndarray]:
        """Ascending eigenvalues and orthonormal eigenvectors (columns)."""
        if self._eigen is None:
            # evr is several times faster than the divide-and-conquer default for complex input
            driver = "evr" if np.iscomplexobj(self.W) else "evd"
            lam, U = scipy.linalg.eigh(self.W, driver=driver, check_finite=False)
            self._eigen = (lam, U)
        return self._eigen

    @property
    def eigenvalues(self) -> np.ndarray:
        if self._eigen is not None:
            return self._eigen[0]
        return scipy.linalg.eigvalsh(self.W, check_finite=False)

    def rotate(self, B: np.ndarray) -> np.ndarray:
        """``U* B U``, cached per matrix object."""
        hit = self._rotated.get(id(B))
        if hit is not None and hit[0] is B:
            return hit[1]
        _, U = self.eigen
        out = U.conj().T @ (B @ U)
        self._rotated[id(B)] = (B, out)
        return out

    def drop_cache(self):
        self._rotated.clear()


def sample_wigner(N: int, beta: int = 2, distribution: str = "gaussian", seed: int = 0) -> WignerSample:
    """Draw a Wigner matrix.

    Off-diagonal entries have variance ``1/N`` (real and imaginary parts
    independent with variance ``1/(2N)`` each when ``beta=2``); diagonal
    entries are real with variance ``2/(N beta)``.  The lower triangle is
    drawn and mirrored so ``W`` is exactly Hermitian.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    if beta not in (1, 2):
        raise ValueError("beta must be 1 or 2")
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"unsupported entry distribution {distribution!r}; choose from {DISTRIBUTIONS}")
    rng = _rng(seed)
    if beta == 1:
        off = _standardized(rng, distribution, (N, N)) / np.sqrt(N)
    else:
        re = _standardized(rng, distribution, (N, N))
        im = _standardized(rng, distribution, (N, N))
        off = (re + 1j * im) / np.sqrt(2 * N)
    diag = _standardized(rng, distribution, N) * np.sqrt(2.0 / (N * beta))
    low = np.tril(off, -1)
    W = low + low.conj().T
    W[np.diag_indices(N)] = diag
    return WignerSample(N, beta, distribution, int(seed), W)


@dataclass
class ObservableSet:
    """Deterministic test matrices and unit vectors built from a recipe."""

    N: int
    recipe: str
    seed: int
    matrices: list = field(default_factory=list)
    vectors: list = field(default_factory=list)


def _haar(rng, N, real):
    if real:
        Z = rng.standard_normal((N, N))
    else:
        Z = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    d = np.diagonal(R)
    return Q * (d / np.abs(d))[None, :]


def _random_hermitian(rng, N, real):
    if real:
        X = rng.standard_normal((N, N))
    else:
        X = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    return (X + X.conj().T) / 2


def _spectral_norm(H):
    return float(np.max(np.abs(scipy.linalg.eigvalsh(H, check_finite=False))))


def _traceless(B):
    return B - (np.trace(B) / B.shape[0]) * np.eye(B.shape[0])


def _signed_projection(rng, N, real):
    signs = np.zeros(N)
    signs[: N // 2] = 1.0
    signs[N // 2: 2 * (N // 2)] = -1.0
    U = _haar(rng, N, real)
    A = (U * signs[None, :]) @ U.conj().T
    return (A + A.conj().T) / 2


def make_observables(N: int, recipe: str, seed: int, count: int = 1, real: bool = False) -> ObservableSet:
    """Build ``count`` test matrices (or two unit vectors) from ``recipe``.

    Matrices have spectral norm 1, except ``identity-plus-traceless`` which
    is ``I + A`` with a traceless ``A`` of norm 1 (so ``<B> = 1``).
    Traceless recipes subtract ``<B> I`` before normalising.
    """
    if recipe not in RECIPES:
        raise ValueError(f"unknown observable recipe {recipe!r}; choose from {RECIPES}")
    rng = _rng(seed)
    obs = ObservableSet(N, recipe, int(seed))
    if recipe == "random-unit-vectors":
        for _ in range(max(count, 2)):
            v = rng.standard_normal(N) if real else rng.standard_normal(N) + 1j * rng.standard_normal(N)
            obs.vectors.append(v / np.linalg.norm(v))
        return obs
    for _ in range(count):
        if recipe == "identity":
            B = np.eye(N)
        elif recipe == "random-hermitian-traceless":
            H = _traceless(_random_hermitian(rng, N, real))
            B = _traceless(H / _spectral_norm(H))
        elif recipe == "signed-projection-traceless":
            A = _traceless(_signed_projection(rng, N, real))
            B = _traceless(A / _spectral_norm(A))
        elif recipe == "random-hermitian":
            H = _random_hermitian(rng, N, real)
            H = H / _spectral_norm(H) + np.eye(N)
            B = H / _spectral_norm(H)
        else:  # identity-plus-traceless
            A = _traceless(_signed_projection(rng, N, real))
            B = np.eye(N) + _traceless(A / _spectral_norm(A))
        obs.matrices.append(B)
    return obs


def matrix_from_ref(N: int, ref: dict) -> np.ndarray:
    """Rebuild a matrix from ``{"recipe", "seed", "member", "real"}``."""
    member = int(ref.get("member", 0))
    obs = make_observables(N, ref["recipe"], int(ref["seed"]), count=member + 1, real=bool(ref.get("real", False)))
    return obs.matrices[member]


def _check_kernels(sample: WignerSample, kernels: Sequence[SpectralKernel]):
    for g in kernels:
        if g.eta <= ETA_FLOOR:
            raise ConditioningError(f"eta={g.eta:.3g} at z={g.z} below the floor {ETA_FLOOR:.3g}")
        if abs(g.z) > Z_MAX:
            raise DomainError(f"|z| = {abs(g.z):.3g} exceeds {Z_MAX:g}")


def _diag(sample: WignerSample, g: SpectralKernel) -> np.ndarray:
    lam = sample.eigen[0]
    return g(lam)


def _chain_avg_eigen(sample, kernels, matrices) -> complex:
    ds = [_diag(sample, g) for g in kernels]
    Bs = [sample.rotate(B) for B in matrices]
    k = len(kernels)
    if k == 1:
        return complex(np.sum(ds[0] * np.diagonal(Bs[0]))) / sample.N
    P = ds[0][:, None] * Bs[0]
    for i in range(1, k - 1):
        P = (P * ds[i][None, :]) @ Bs[i]
    return complex(np.sum((P * ds[-1][None, :]) * Bs[-1].T)) / sample.N


def _solve(W, z, rhs):
    return scipy.linalg.solve(W - z * np.eye(W.shape[0]), rhs, check_finite=False)


def _apply_kernel_direct(W, g: SpectralKernel, rhs):
    if g.kind == "resolvent":
        return _solve(W, g.z, rhs)
    return abs_resolvent_direct(W, g.z) @ rhs


def _chain_avg_direct(sample, kernels, matrices) -> complex:
    W = sample.W
    Y = np.asarray(matrices[-1], dtype=complex)
    for i in range(len(kernels) - 1, -1, -1):
        Y = _apply_kernel_direct(W, kernels[i], Y)
        if i > 0:
            Y = matrices[i - 1] @ Y
    return complex(np.trace(Y)) / sample.N


def chain_avg(sample: WignerSample, chain: ChainSpec, method: str = "eigen") -> complex:
    """``<G_1 B_1 ... G_k B_k>``; ``method='direct'`` uses linear solves instead."""
    if chain.form != "averaged":
        raise ValueError("chain_avg needs an averaged chain")
    _check_kernels(sample, chain.kernels)
    if method == "eigen":
        return _chain_avg_eigen(sample, chain.kernels, chain.matrices)
    if method == "direct":
        return _chain_avg_direct(sample, chain.kernels, chain.matrices)
    raise ValueError(f"unknown method {method!r}")


def chain_iso(sample: WignerSample, chain: ChainSpec, x: np.ndarray, y: np.ndarray, method: str = "eigen") -> complex:
    """``<x, G_1 B_1 ... B_k G_{k+1} y>``."""
    if chain.form != "isotropic":
        raise ValueError("chain_iso needs an isotropic chain")
    _check_kernels(sample, chain.kernels)
    x = np.asarray(x)
    y = np.asarray(y)
    if method == "eigen":
        _, U = sample.eigen
        v = _diag(sample, chain.kernels[-1]) * (U.conj().T @ y)
        for g, B in zip(reversed(chain.kernels[:-1]), reversed(chain.matrices)):
            v = _diag(sample, g) * (sample.rotate(B) @ v)
        return complex(np.vdot(U.conj().T @ x, v))
    if method == "direct":
        v = _apply_kernel_direct(sample.W, chain.kernels[-1], y.astype(complex))
        for g, B in zip(reversed(chain.kernels[:-1]), reversed(chain.matrices)):
            v = _apply_kernel_direct(sample.W, g, B @ v)
        return complex(np.vdot(x, v))
    raise ValueError(f"unknown method {method!r}")


def psi_av(sample: WignerSample, chain) -> float:
    """``N eta^{k/2} |<G_1 A_1 ... G_k A_k> - <M A_k>|`` for traceless ``A``'s.

    A bare spectral parameter gives the single-resolvent version
    ``N eta |<G> - m(z)|``.
    """
    if not isinstance(chain, ChainSpec):
        z = complex(chain)
        g = SpectralKernel.resolvent(z)
        _check_kernels(sample, [g])
        lam = sample.eigenvalues
        val = np.mean(1.0 / (lam - z))
        return float(sample.N * g.eta * abs(val - stieltjes(z)))
    if not all(chain.traceless_flags):
        raise DomainError("psi_av is defined for traceless matrices only")
    diff = chain_avg(sample, chain) - m_avg(chain)
    return float(sample.N * chain.eta ** (chain.k / 2) * abs(diff))


def psi_iso(sample: WignerSample, chain, x: np.ndarray, y: np.ndarray) -> float:
    """``sqrt(N eta^{k+1}) |(G_1 A_1 ... A_k G_{k+1} - M)_{xy}|``."""
    if not isinstance(chain, ChainSpec):
        z = complex(chain)
        chain = ChainSpec((z,), (), "isotropic")
        k = 0
        M = stieltjes(z) * np.eye(sample.N)
    else:
        if not all(chain.traceless_flags):
            raise DomainError("psi_iso is defined for traceless matrices only")
        k = chain.k
        M = m_matrix(chain).matrix_part
    val = chain_iso(sample, chain, x, y)
    diff = val - complex(np.vdot(x, M @ y))
    return float(np.sqrt(sample.N * chain.eta ** (k + 1)) * abs(diff))


def heisenberg_pair(sample: WignerSample, s: float, A1: np.ndarray, A2: np.ndarray) -> complex:
    """``<e^{isW} A_1 e^{-isW} A_2>`` by spectral calculus."""
    lam = sample.eigen[0]
    ph = np.exp(1j * s * lam)
    R1, R2 = sample.rotate(A1), sample.rotate(A2)
    # (1/N) sum_ab e^{is(l_a - l_b)} R1_ab R2_ba
    return complex(np.sum((ph[:, None] * R1 * ph.conj()[None, :]) * R2.T)) / sample.N


def fw_chain(sample: WignerSample, fns: Sequence, matrices: Sequence[np.ndarray], form: str = "averaged",
             x: np.ndarray | None = None, y: np.ndarray | None = None):
    """``<f_1(W) B_1 ... f_k(W) B_k>`` or ``<x, f_1(W) B_1 ... f_k(W) y>``."""
    lam, U = sample.eigen
    ds = [np.asarray(f(lam), dtype=complex) for f in fns]
    if form == "averaged":
        if len(matrices) != len(fns):
            raise ValueError("averaged form needs one matrix per function")
        Bs = [sample.rotate(B) for B in matrices]
        if len(fns) == 1:
            return complex(np.sum(ds[0] * np.diagonal(Bs[0]))) / sample.N
        P = ds[0][:, None] * Bs[0]
        for i in range(1, len(fns) - 1):
            P = (P * ds[i][None, :]) @ Bs[i]
        return complex(np.sum((P * ds[-1][None, :]) * Bs[-1].T)) / sample.N
    if len(matrices) != len(fns) - 1:
        raise ValueError("isotropic form needs one matrix fewer than functions")
    v = ds[-1] * (U.conj().T @ y)
    for d, B in zip(reversed(ds[:-1]), reversed(matrices)):
        v = d * (sample.rotate(B) @ v)
    return complex(np.vdot(U.conj().T @ x, v))


def abs_resolvent_direct(W: np.ndarray, z: complex, rtol: float = 1e-10) -> np.ndarray:
    """``|W - z|^{-1}`` from resolvents only.

    Uses ``|G(E+i eta)| = (1/(i pi)) int_0^inf (G(E+ir) - G(E-ir)) / r ds``
    with ``r = sqrt(eta^2 + s^2)``, after ``s = eta tan(t)``.  Meant as an
    independent cross-check on small matrices.
    """
    E, eta = z.real, abs(z.imag)
    n = W.shape[0]
    eye = np.eye(n)

    def integrand(t):
        r = eta / np.cos(t)
        diff = np.linalg.inv(W - (E + 1j * r) * eye) - np.linalg.inv(W - (E - 1j * r) * eye)
        # ds / r = sec(t) dt after the substitution
        return (diff / (1j * np.pi) / np.cos(t)).ravel()

    val, _ = quad_vec(integrand, 0.0, np.pi / 2, epsrel=rtol, epsabs=0.0, limit=2000)
    return val.reshape(n, n)


def contour_resolvent_product(W: np.ndarray, zs: Sequence[complex], zeta: float, rtol: float = 1e-10) -> np.ndarray:
    """Right-hand side of the residue representation of ``prod_j G(z_j)``.

    ``(1/pi) int_R Im G(x + i zeta) prod_j 1/(x - z_j + sgn(Im z_j) i zeta) dx``,
    valid when all ``z_j`` lie in one half-plane above ``|Im z_j| > zeta``.
    """
    zs = [complex(z) for z in zs]
    signs = {np.sign(z.imag) for z in zs}
    if len(signs) != 1 or not 0 < zeta < min(abs(z.imag) for z in zs):
        raise DomainError("need a common half-plane and 0 < zeta < min |Im z|")
    sigma = signs.pop()
    n = W.shape[0]
    eye = np.eye(n)

    def integrand(x):
        G = np.linalg.inv(W - (x + 1j * zeta) * eye)
        imG = (G - G.conj().T) / 2j
        h = np.prod([1.0 / (x - z + sigma * 1j * zeta) for z in zs])
        return (imG * h / np.pi).ravel()

    val, _ = quad_vec(integrand, -np.inf, np.inf, epsrel=rtol, epsabs=0.0, limit=4000)
    return val.reshape(n, n)
