import numpy as np
import pytest

from resolvent_lab.ensemble import (
    ETA_FLOOR,
    abs_resolvent_direct,
    chain_avg,
    chain_iso,
    contour_resolvent_product,
    derive_seed,
    fw_chain,
    heisenberg_pair,
    make_observables,
    matrix_from_ref,
    psi_av,
    psi_iso,
    sample_wigner,
)
from resolvent_lab.harness import random_chain
from resolvent_lab.mchain import ChainSpec, ConditioningError
from resolvent_lab.ncpart import DomainError
from resolvent_lab.semicircle import FunctionKernel, SpectralKernel


@pytest.mark.parametrize("beta", [1, 2])
@pytest.mark.parametrize("dist", ["gaussian", "rademacher", "uniform"])
def test_sample_is_hermitian_and_reproducible(beta, dist):
    a = sample_wigner(40, beta, dist, 123)
    b = sample_wigner(40, beta, dist, 123)
    assert np.array_equal(a.W, b.W)
    assert np.array_equal(a.W, a.W.conj().T)
    assert np.iscomplexobj(a.W) == (beta == 2)
    assert not np.array_equal(a.W, sample_wigner(40, beta, dist, 124).W)


@pytest.mark.parametrize("beta", [1, 2])
def test_entry_variances(beta):
    n = 400
    W = sample_wigner(n, beta, "gaussian", 5).W
    off = W[np.tril_indices(n, -1)]
    assert abs(np.mean(np.abs(off) ** 2) * n - 1) < 0.02
    assert abs(np.mean(np.diag(W).real ** 2) * n - 2 / beta) < 0.3
    if beta == 2:
        assert abs(np.mean(off.real ** 2) / np.mean(off.imag ** 2) - 1) < 0.05
        assert abs(np.mean(off ** 2)) * n < 0.02


def test_sample_errors():
    with pytest.raises(ValueError):
        sample_wigner(1)
    with pytest.raises(ValueError):
        sample_wigner(10, beta=4)
    with pytest.raises(ValueError):
        sample_wigner(10, distribution="cauchy")


def test_derive_seed_distinct():
    seeds = {derive_seed(1, n, t) for n in (64, 128) for t in range(50)}
    assert len(seeds) == 100
    assert derive_seed(1, 64, 3) == derive_seed(1, 64, 3)


def test_eigendecomposition_reconstruction():
    for beta in (1, 2):
        s = sample_wigner(60, beta, "gaussian", 2)
        lam, U = s.eigen
        assert np.all(np.diff(lam) >= 0)
        assert np.linalg.norm(U @ np.diag(lam) @ U.conj().T - s.W) <= 1e-10 * np.linalg.norm(s.W)
        assert np.allclose(s.eigenvalues, np.linalg.eigvalsh(s.W), atol=1e-12)


@pytest.mark.parametrize("recipe", ["random-hermitian-traceless", "signed-projection-traceless",
                                    "random-hermitian", "identity", "identity-plus-traceless"])
def test_observable_recipes(recipe):
    n = 30
    obs = make_observables(n, recipe, 4, count=2)
    assert len(obs.matrices) == 2
    for B in obs.matrices:
        assert np.allclose(B, B.conj().T)
        tr = np.trace(B) / n
        norm = np.linalg.norm(B, 2)
        if recipe == "identity-plus-traceless":
            assert abs(tr - 1) < 1e-14
        elif recipe.endswith("-traceless"):
            assert abs(tr) < 1e-14
            assert abs(norm - 1) < 1e-12
        else:
            assert abs(norm - 1) < 1e-12
            assert abs(tr) > 0.1


def test_observable_vectors_and_refs():
    obs = make_observables(20, "random-unit-vectors", 1)
    x, y = obs.vectors[:2]
    assert abs(np.linalg.norm(x) - 1) < 1e-14 and abs(np.linalg.norm(y) - 1) < 1e-14
    ref = {"recipe": "random-hermitian", "seed": 3, "member": 1, "real": True}
    assert np.array_equal(matrix_from_ref(10, ref), make_observables(10, "random-hermitian", 3, 2, True).matrices[1])
    with pytest.raises(ValueError):
        make_observables(10, "orthogonal", 1)


def _dense_chain(W, chain):
    n = W.shape[0]
    out = np.eye(n, dtype=complex)
    lam, U = np.linalg.eigh(W)
    for g, B in zip(chain.kernels, chain.matrices):
        G = U @ np.diag(g(lam)) @ U.conj().T
        out = out @ G @ B
    return np.trace(out) / n


def test_chain_paths_agree(rng):
    s = sample_wigner(24, 2, "gaussian", 7)
    for _ in range(5):
        chain = random_chain(rng, 24, 4, 0.1, "averaged", resolvent_only=False)
        eig = chain_avg(s, chain)
        assert abs(eig - _dense_chain(s.W, chain)) < 1e-10 * max(1, abs(eig))
        assert abs(eig - chain_avg(s, chain, method="direct")) < 1e-8 * max(1, abs(eig))


def test_isotropic_paths_agree(rng):
    s = sample_wigner(20, 1, "gaussian", 8)
    x, y = make_observables(20, "random-unit-vectors", 2).vectors[:2]
    chain = random_chain(rng, 20, 3, 0.2, "isotropic", k=3)
    a = chain_iso(s, chain, x, y)
    b = chain_iso(s, chain, x, y, method="direct")
    assert abs(a - b) < 1e-10 * max(1, abs(a))


def test_conjugation_symmetry(rng):
    s = sample_wigner(30, 2, "gaussian", 9)
    chain = random_chain(rng, 30, 4, 0.1, "averaged", k=4)
    zs = [g.z.conjugate() for g in chain.kernels]
    mats = [B.conj().T for B in chain.matrices]
    # <G1 B1 ... Gk Bk>^* = <Bk^* Gk^* ... B1^* G1^*>, rotated to start with a resolvent
    kern = [zs[0]] + zs[1:][::-1]
    mats_rev = mats[::-1]
    conj_chain = ChainSpec(tuple(kern), tuple(mats_rev))
    assert abs(chain_avg(s, conj_chain) - np.conj(chain_avg(s, chain))) < 1e-12


def test_ward_identity():
    s = sample_wigner(80, 2, "gaussian", 10)
    z = 0.3 + 0.05j
    lam = s.eigen[0]
    g = 1 / (lam - z)
    lhs = chain_avg(s, ChainSpec((z, z.conjugate()), (np.eye(80), np.eye(80))))
    assert abs(lhs - np.mean(g.imag) / z.imag) < 1e-10 * abs(lhs)


def test_abs_kernel_integral_representation():
    s = sample_wigner(8, 2, "gaussian", 11)
    z = 0.2 + 0.3j
    lam, U = s.eigen
    direct = U @ np.diag(1 / np.abs(lam - z)) @ U.conj().T
    assert np.allclose(abs_resolvent_direct(s.W, z), direct, atol=1e-8)


def test_contour_identity():
    s = sample_wigner(6, 1, "gaussian", 12)
    zs = [0.3 + 0.4j, -0.5 + 0.6j, 1.1 + 0.5j]
    prod = np.eye(6, dtype=complex)
    for z in zs:
        prod = prod @ np.linalg.inv(s.W - z * np.eye(6))
    assert np.allclose(contour_resolvent_product(s.W, zs, 0.2), prod, atol=1e-8)
    with pytest.raises(DomainError):
        contour_resolvent_product(s.W, [1j, -1j], 0.1)


def test_heisenberg_pair():
    s = sample_wigner(50, 2, "gaussian", 13)
    A = make_observables(50, "random-hermitian-traceless", 1).matrices[0]
    assert abs(heisenberg_pair(s, 0.0, A, A) - np.trace(A @ A) / 50) < 1e-13
    lam, U = s.eigen
    E = U @ np.diag(np.exp(1.5j * lam)) @ U.conj().T
    assert abs(heisenberg_pair(s, 1.5, A, A) - np.trace(E @ A @ E.conj().T @ A) / 50) < 1e-12


def test_fw_chain():
    s = sample_wigner(30, 2, "gaussian", 14)
    B1, B2 = make_observables(30, "random-hermitian", 2, count=2).matrices
    one = FunctionKernel(lambda x: 1.0)
    assert abs(fw_chain(s, [one, one], [B1, B2]) - np.trace(B1 @ B2) / 30) < 1e-13
    ident = FunctionKernel(lambda x: x)
    assert abs(fw_chain(s, [ident], [np.eye(30)]) - np.trace(s.W) / 30) < 1e-13


def test_psi_values_and_errors():
    s = sample_wigner(64, 2, "gaussian", 15)
    z = 0.1 + 0.5j
    assert psi_av(s, z) >= 0
    x, y = make_observables(64, "random-unit-vectors", 3).vectors[:2]
    assert psi_iso(s, z, x, y) >= 0
    B = make_observables(64, "random-hermitian", 1).matrices[0]
    with pytest.raises(DomainError):
        psi_av(s, ChainSpec((z,), (B,)))


def test_eta_floor_and_z_cap():
    s = sample_wigner(10, 2, "gaussian", 16)
    with pytest.raises(ConditioningError):
        chain_avg(s, ChainSpec((SpectralKernel.resolvent(complex(0, ETA_FLOOR / 2)),), (np.eye(10),)))
    with pytest.raises(DomainError):
        chain_avg(s, ChainSpec((complex(2e6, 1),), (np.eye(10),)))
