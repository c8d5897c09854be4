"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the summary lines
are also collected at the end of the pytest report.
"""

import math
import time
from itertools import combinations

import numpy as np

from conftest import record_criterion
from resolvent_lab.ensemble import derive_seed, sample_wigner
from resolvent_lab.harness import (
    ExperimentConfig,
    fit_scaling,
    random_chain,
    run_locallaw_scan,
    sqrt_eta_rule_test,
    thermalization_scan,
    two_scale_clt,
)
from resolvent_lab.mchain import ChainSpec, m_avg, m_bound, m_matrix, m_matrix_q, recursion_residual
from resolvent_lab.ncpart import (
    Partition,
    catalan,
    enumerate_all_partitions,
    enumerate_ncp,
    kreweras,
)
from resolvent_lab.semicircle import (
    CumulantTable,
    divided_difference,
    divided_difference_quadrature,
    divided_difference_recursive,
    free_cumulant_moebius,
    stieltjes,
)


def _crosses(p: Partition) -> bool:
    lab = p.labels()
    for a, c, b, d in combinations(range(p.k), 4):
        if lab[a] == lab[b] and lab[c] == lab[d] and lab[a] != lab[c]:
            return True
    return False


def test_c01_combinatorics_exactness():
    t0 = time.perf_counter()
    problems = []
    for k in range(1, 8):
        ncp = enumerate_ncp(k)
        oracle = {p for p in enumerate_all_partitions(k) if not _crosses(p)}
        if set(ncp) != oracle or len(ncp) != len(oracle):
            problems.append(f"k={k}: enumeration differs from filtered oracle")
        if len(ncp) != math.comb(2 * k, k) // (k + 1) or catalan(k) != len(ncp):
            problems.append(f"k={k}: count {len(ncp)} is not Catalan")
        shift = lambda i: (i - 2) % k + 1  # noqa: E731
        for p in ncp:
            K = kreweras(p)
            if len(p) + len(K) != k + 1:
                problems.append(f"{p}: |pi|+|K(pi)| != k+1")
            if kreweras(K) != p.relabel(shift):
                problems.append(f"{p}: K^2 is not the cyclic shift")
    if str(kreweras(Partition.from_string("134|2|5|6"))) != "12|3|456":
        problems.append("K(134|2|5|6) != 12|3|456")
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 10
    record_criterion(1, "combinatorics exactness", ok, f"{len(problems)} problems, {elapsed:.2f}s (limit 10s)")
    assert ok, problems[:5]


def test_c02_free_cumulant_round_trip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_round = worst_route = 0.0
    for n in range(1, 7):
        for _ in range(5):
            values = {}

            def moment(T):
                if T not in values:
                    values[T] = complex(rng.standard_normal(), rng.standard_normal())
                return values[T]

            B = tuple(sorted(rng.choice(50, size=n, replace=False).tolist()))
            table = CumulantTable(moment)
            for r in range(1, n + 1):
                for T in combinations(B, r):
                    resum = 0j
                    for pi in enumerate_ncp(r):
                        prod = 1 + 0j
                        for b in pi.blocks:
                            prod *= table[tuple(T[i - 1] for i in b)]
                        resum += prod
                    worst_round = max(worst_round, abs(resum - moment(T)))
            worst_route = max(worst_route, abs(table[B] - free_cumulant_moebius(moment, B)))
    elapsed = time.perf_counter() - t0
    ok = worst_round < 1e-12 and worst_route < 1e-12 and elapsed < 5
    record_criterion(2, "free-cumulant round trip", ok,
                     f"round trip {worst_round:.1e}, recursion vs Moebius {worst_route:.1e} (tol 1e-12), {elapsed:.2f}s")
    assert ok


def test_c03_formula_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 33))
        chain = random_chain(rng, n, 6, 0.05, rng.choice(["averaged", "isotropic"]))
        M, Mq = m_matrix(chain).matrix_part, m_matrix_q(chain).matrix_part
        worst = max(worst, np.linalg.norm(M - Mq) / np.linalg.norm(M))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 60
    record_criterion(3, "partition vs graph formula", ok, f"max relative diff {worst:.1e} (tol 1e-10), {elapsed:.1f}s")
    assert ok


def test_c04_recursion_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 17))
        chain = random_chain(rng, n, 6, 0.05, "isotropic", k=int(rng.integers(1, 6)))
        kk = len(chain.kernels)
        for j in range(1, kk + 1):
            for variant in ("rec1", "rec2"):
                worst = max(worst, recursion_residual(chain, j, variant))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 60
    record_criterion(4, "recursion identities", ok, f"max residual {worst:.1e} (tol 1e-9), {elapsed:.1f}s")
    assert ok


def _traceless(rng, n):
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    X = X - np.trace(X) / n * np.eye(n)
    return X / np.linalg.norm(X, 2)


def _dd2(z1, z2):
    # independent divided difference straight from the transform
    return (stieltjes(z1) - stieltjes(z2)) / (z1 - z2)


def test_c05_worked_examples():
    rng = np.random.default_rng(5)
    n = 12
    tr = lambda X: np.trace(X) / n  # noqa: E731
    eye = np.eye(n)
    worst = 0.0

    z1, z2, z3, z4 = 0.3 + 0.7j, -1.1 - 0.4j, 0.9 + 0.25j, -0.2 + 1.3j
    m1, m2, m3, m4 = (stieltjes(z) for z in (z1, z2, z3, z4))

    def compare(value, expected_terms):
        nonlocal worst
        by_pi = {str(pi): (c, T) for pi, c, T in value.decomposition}
        matched = set()
        for pi, coeff, mat in expected_terms:
            c, T = by_pi[pi]
            worst = max(worst, abs(c - coeff) / abs(coeff), np.linalg.norm(T - mat) / max(np.linalg.norm(mat), 1e-300))
            matched.add(pi)
        for pi, (c, T) in by_pi.items():
            if pi not in matched:
                worst = max(worst, abs(c) * np.linalg.norm(T))
        total = sum(c * m for _, c, m in expected_terms)
        worst = max(worst, np.linalg.norm(value.matrix_part - total) / np.linalg.norm(total))

    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    B /= np.linalg.norm(B, 2)
    compare(m_matrix(ChainSpec((z1, z2), (B,), "isotropic")),
            [("12", _dd2(z1, z2) - m1 * m2, tr(B) * eye), ("1|2", m1 * m2, B)])

    A1, A2, A3 = (_traceless(rng, n) for _ in range(3))
    compare(m_matrix(ChainSpec((z1, z2, z3), (A1, A2), "isotropic")),
            [("13|2", (_dd2(z1, z3) - m1 * m3) * m2, tr(A1 @ A2) * eye),
             ("1|2|3", m1 * m2 * m3, A1 @ A2)])

    compare(m_matrix(ChainSpec((z1, z2, z3, z4), (A1, A2, A3), "isotropic")),
            [("14|2|3", (_dd2(z1, z4) - m1 * m4) * m2 * m3, tr(A1 @ A2 @ A3) * eye),
             ("1|2|3|4", m1 * m2 * m3 * m4, A1 @ A2 @ A3),
             ("1|24|3", (_dd2(z2, z4) - m2 * m4) * m1 * m3, A1 * tr(A2 @ A3)),
             ("13|2|4", (_dd2(z1, z3) - m1 * m3) * m2 * m4, A3 * tr(A1 @ A2))])
    ok = worst < 1e-12
    record_criterion(5, "worked examples term by term", ok, f"max deviation {worst:.1e} (tol 1e-12)")
    assert ok


def test_c06_divided_differences():
    rng = np.random.default_rng(6)
    worst_agree = 0.0
    for _ in range(60):
        j = int(rng.integers(2, 6))
        eta = rng.uniform(0.1, 1.0)
        while True:
            zs = [complex(rng.uniform(-2.5, 2.5), rng.choice([-1, 1]) * eta * rng.uniform(1, 3)) for _ in range(j)]
            if min(abs(a - b) for a, b in combinations(zs, 2)) >= 0.3:
                break
        rec, quad = divided_difference_recursive(zs), divided_difference_quadrature(zs)
        worst_agree = max(worst_agree, abs(rec - quad) / abs(quad))
    worst_bound = 0.0
    for _ in range(300):
        j = int(rng.integers(1, 7))
        eta = 10 ** rng.uniform(-3, 0)
        centre = rng.uniform(-2.5, 2.5)
        spread = 10 ** rng.uniform(-6, 0)
        zs = [complex(centre + spread * rng.standard_normal(), rng.choice([-1, 1]) * eta * 10 ** rng.uniform(0, 1))
              for _ in range(j)]
        eta_min = min(abs(z.imag) for z in zs)
        worst_bound = max(worst_bound, abs(divided_difference(zs)) * eta_min ** (j - 1))
    ok = worst_agree < 1e-8 and worst_bound <= 10
    record_criterion(6, "divided differences", ok,
                     f"recursive vs quadrature {worst_agree:.1e} (tol 1e-8), max |m[z..]| eta^(j-1) = {worst_bound:.2f} (<= 10)")
    assert ok


def test_c07_single_resolvent_local_law():
    t0 = time.perf_counter()
    details, ok = [], True
    for beta in (1, 2):
        for n in (256, 512, 1024):
            eta = n ** -0.8
            z = 1j * eta
            m = stieltjes(z)
            vals = []
            for t in range(64):
                lam = sample_wigner(n, beta, "gaussian", derive_seed(7, beta, n, t)).eigenvalues
                vals.append(n * eta * abs(np.mean(1.0 / (lam - z)) - m))
            med = float(np.median(vals))
            ok &= med <= 20
            details.append(f"b{beta}/N{n}:{med:.2f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    record_criterion(7, "single-resolvent local law", ok, f"median N*eta*|<G-m>| {' '.join(details)} (<= 20), {elapsed:.0f}s")
    assert ok


def test_c08_optimal_two_chain_rate():
    t0 = time.perf_counter()
    cfg = ExperimentConfig("locallaw-scan", N=(256, 512, 1024, 2048), eta_exp=(0.5,), k=2, a=2, beta=2,
                           trials=64, seed=8, layout="conjugate-alternating", energy=0.0)
    fit = fit_scaling(run_locallaw_scan(cfg), "N")
    elapsed = time.perf_counter() - t0
    ok = abs(fit.slope + 0.5) <= 0.2 and elapsed < 1800
    record_criterion(8, "k=2 traceless rate", ok,
                     f"N-slope {fit.slope:.3f} +- {fit.stderr:.3f} (target -0.5 +- 0.2), {elapsed:.0f}s")
    assert ok


def test_c09_sqrt_eta_rule():
    t0 = time.perf_counter()
    cfg = ExperimentConfig("sqrt-eta-rule", N=(1024,), eta=tuple(np.geomspace(0.02, 0.3, 5)), k=2, a=2, a_alt=0,
                           beta=2, trials=64, seed=9, general_recipe="identity")
    res = sqrt_eta_rule_test(cfg)
    elapsed = time.perf_counter() - t0
    ok = abs(res.gap - 1.0) <= 0.3 and elapsed < 1800
    record_criterion(9, "sqrt-eta rule", ok,
                     f"slopes a=2 {res.fit_a.slope:.3f}, a=0 {res.fit_alt.slope:.3f}, gap {res.gap:.3f} "
                     f"(target 1.0 +- 0.3), {elapsed:.0f}s")
    assert ok


def test_c10_thermalization():
    t0 = time.perf_counter()
    cfg = ExperimentConfig("thermalization", N=(512, 1024), s=tuple(range(11)), beta=2, trials=64, seed=10,
                           recipe="random-hermitian-traceless", same_observables=True)
    rec = thermalization_scan(cfg)
    med = {(p.N, p.s): p.stats["error"]["median"] for p in rec.points}
    # s = 0 is the identity evolution: only rounding error remains
    bound_ok = all(med[1024, float(s)] <= max(50 * s / 1024, 1e-12) for s in range(11))
    worst = max(med[1024, float(s)] * 1024 / s for s in range(1, 11))
    factor = med[512, 4.0] / med[1024, 4.0]
    elapsed = time.perf_counter() - t0
    ok = bound_ok and 1.5 <= factor <= 3 and elapsed < 900
    record_criterion(10, "thermalization", ok,
                     f"max median*N/s {worst:.2f} (<= 50), s=0 error {med[1024, 0.0]:.1e}, "
                     f"error ratio N=512/1024 at s=4 {factor:.2f} (in [1.5, 3]), {elapsed:.0f}s")
    assert ok


def test_c11_two_scale_clt():
    t0 = time.perf_counter()
    cfg = ExperimentConfig("two-scale-clt", N=(1024,), eta_exp=(0.5,), beta=2, trials=128, seed=11,
                           recipe="identity-plus-traceless")
    p = two_scale_clt(cfg).points[0]
    ratio, predicted = p.values["sd_ratio"], p.values["predicted_ratio"]
    elapsed = time.perf_counter() - t0
    ok = predicted / 3 <= ratio <= 3 * predicted and elapsed < 600
    record_criterion(11, "two-scale CLT", ok,
                     f"sd ratio {ratio:.4f} vs sqrt(eta)<B0 B0*>^1/2 = {predicted:.4f} "
                     f"(factor {ratio / predicted:.2f}, allowed 1/3..3), {elapsed:.0f}s")
    assert ok


def test_c12_bound_compliance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    worst_norm = worst_avg = 0.0
    for _ in range(200):
        n = int(rng.integers(4, 25))
        eta = 10 ** rng.uniform(-2, 0)
        k = int(rng.integers(1, 6))
        a = int(rng.integers(0, k + 1))
        iso = random_chain(rng, n, 5, eta, "isotropic", k=k, a=a)
        worst_norm = max(worst_norm, np.linalg.norm(m_matrix(iso).matrix_part, 2) / m_bound(iso))
        avg = random_chain(rng, n, 5, eta, "averaged", k=k, a=a)
        worst_avg = max(worst_avg, abs(m_avg(avg)) / m_bound(avg))
    elapsed = time.perf_counter() - t0
    ok = worst_norm <= 10 and worst_avg <= 10 and elapsed < 60
    record_criterion(12, "size bounds", ok,
                     f"max ||M||/bound {worst_norm:.3f}, max |<MB>|/bound {worst_avg:.3f} (<= 10), {elapsed:.1f}s")
    assert ok
