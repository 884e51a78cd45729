"""Acceptance criteria 1-9.

Each test records one ``criterion N: PASS|FAIL`` line; the lines are printed
in the terminal summary (see conftest.py) and by running this file directly.
"""

import time
from fractions import Fraction

import pytest
import sympy as sp

from oracles import f1_jacobians, f1_tau_series, l1, l2, mismatches, series_to_dict
from toricqdm import brown, decomp, mirror
from toricqdm.toric import load_toric_bundle, projective_config

RESULTS = {}


def record(n, ok, detail=""):
    RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
    print(RESULTS[n])
    return ok


# 1 ---------------------------------------------------------------------------


@pytest.mark.parametrize("N", [2, 3])
def test_criterion_1_projective_ring(N):
    E = load_toric_bundle(projective_config(N))
    t0 = time.perf_counter()
    qp = decomp.quantum_product_E(E, order=3, param_order=1)
    rep = decomp.relation_report(qp, [decomp.projective_relation(N)], {"P": E.index(1, 0)})
    dt = time.perf_counter() - t0
    ok = rep.passed and dt < 60
    record(f"1 (N={N})", ok, f"{rep.line()}, {dt:.1f}s")
    assert ok, rep.residual[:5]


# 2 ---------------------------------------------------------------------------


def test_criterion_2_f1_equivariant_ring(F1):
    t0 = time.perf_counter()
    qp = decomp.quantum_product_E(F1, order={"q": 3, "Q": 1}, param_order=1)
    rep = decomp.relation_report(qp, decomp.F1_RELATIONS, {"P": F1.index(1, 0), "phi": F1.index(0, 1)})
    dt = time.perf_counter() - t0
    ok = rep.passed and dt < 300
    record(2, ok, f"{rep.line()}, {dt:.1f}s")
    assert ok, rep.residual[:5]


# 3 ---------------------------------------------------------------------------


def test_criterion_3_f1_jacobians(F1, f1_dec_q3):
    bad_all = []
    for gamma, b in enumerate(f1_dec_q3.blocks, 1):
        J = f1_dec_q3.jac_chi[b.alpha]
        mine = {**series_to_dict(J[F1.index(0, 1)], "phi"), **series_to_dict(J[F1.index(1, 0)], "P")}
        bad = mismatches(mine, f1_jacobians(gamma, 3), keep=lambda k: k[2] < 2 and k[1] <= 3)
        # the log-free series part of chi tau itself (Q^0), also through q^3
        tau = series_to_dict(f1_dec_q3.chi_tau_series(b.alpha))
        bad += mismatches(tau, f1_tau_series(gamma, 3), keep=lambda k: k[1] == 0 and k[0] <= 3)
        bad_all += [(b.alpha, k) for k in bad]
    ok = not bad_all
    record(3, ok, f"{len(bad_all)} mismatching coefficients")
    assert ok, bad_all[:5]


# 4 ---------------------------------------------------------------------------


def test_criterion_4_nonequivariant(f1_dec):
    reps = decomp.nonequivariant_checks(f1_dec.qp)
    ok = all(r.passed for r in reps)
    record(4, ok, "; ".join(r.line() for r in reps))
    assert ok


@pytest.mark.xfail(strict=True, reason="J(P) closed form as printed has q^{1/2} Q phi where q^{-1/2} Q phi is needed")
def test_criterion_4_literal_printed_formula():
    rep = decomp.f1_closed_form_homomorphism(1, corrected=False)
    RESULTS["4 (literal J(P) formula)"] = f"criterion 4 literal formula: {'PASS' if rep.passed else 'FAIL (xfail)'}"
    assert rep.passed, rep.residual


# 5 ---------------------------------------------------------------------------


def test_criterion_5_brown_identity(P1, F1):
    reps = [brown.check_brown_identity(P1, a, order=2, hi=3) for a in [(1,), (2,)]]
    reps += [brown.check_brown_identity(F1, a, order={"q": 2, "Q": 1}, hi=2) for a in [(1,), (2,)]]
    ok = all(r.passed for r in reps)
    record(5, ok, "; ".join(r.line() for r in reps))
    assert ok


# 6 ---------------------------------------------------------------------------


def test_criterion_6_gamma_cross_check():
    want = [Fraction(1), Fraction(1, 12), Fraction(1, 288), Fraction(-139, 51840)]
    sp_tail = mirror.gamma_stationary_phase(3)
    bern = brown.gamma_hat(3).tail[:4]
    x = sp.Symbol("x")
    expo = sum(sp.bernoulli(2 * m) / (2 * m * (2 * m - 1)) * x ** (2 * m - 1) for m in range(1, 4))
    ser = sp.series(sp.exp(expo), x, 0, 4).removeO()
    oracle = [Fraction(str(ser.coeff(x, k))) for k in range(4)]
    ok = sp_tail == want == bern == oracle
    record(6, ok, f"stationary phase {[str(c) for c in sp_tail]}")
    assert ok


# 7 ---------------------------------------------------------------------------


def test_criterion_7_critical_branch(P1, P2):
    br = mirror.critical_branch(mirror.chart_build(P1, (1,)), 5)
    u = sp.Symbol("u2", positive=True)
    qs = sp.Symbol("q")
    root = sp.series((u + sp.sqrt(u ** 2 + 4 * qs)) / 2, qs, 0, 6).removeO()
    got = {t["q"][0]: sp.sympify(t["coeff"], locals={"u2": u}) for t in br.rho[2].to_json()["terms"]}
    bad = [k for k in range(6) if sp.cancel(got.get(k, 0) - root.coeff(qs, k)) != 0]
    reps = [mirror.critical_branch(mirror.chart_build(P2, a), 5).residual_report() for a in [(1,), (2,), (3,)]]
    ok = not bad and all(r.passed for r in reps)
    record(7, ok, f"rho2 mismatches {bad}; " + "; ".join(r.line() for r in reps))
    assert ok


# 8 ---------------------------------------------------------------------------


def kouchnirenko_bound(N):
    """(N - k)! Vol of the Newton polytope of the chart potential, k = 1.

    On the chart xi_N = q / (xi_1 ... xi_{N-1}) the exponents are e_1..e_{N-1}
    and -(e_1 + ... + e_{N-1}); the polytope is the cone from the origin over
    its N facets, each a unimodular simplex.
    """
    d = N - 1
    verts = [[int(i == j) for j in range(d)] for i in range(d)] + [[-1] * d]
    vol = sp.Integer(0)
    for skip in range(N):
        facet = [v for i, v in enumerate(verts) if i != skip]
        vol += abs(sp.Matrix(facet).det()) / sp.factorial(d)
    bound = sp.factorial(d) * vol
    return bound == N, int(bound)


@pytest.mark.parametrize("N", [2, 3])
def test_criterion_8_kouchnirenko(N):
    E = load_toric_bundle(projective_config(N))
    ok_vol, expected = kouchnirenko_bound(N)
    counts = []
    for q, lam in mirror.generic_samples(N, 5, seed=N):
        c = mirror.critical_count_numeric(E, q, lam)
        counts.append((c.count, max(c.residuals)))
    ok = ok_vol and all(n == expected and r < 1e-9 for n, r in counts)
    record(f"8 (N={N})", ok, f"counts {[n for n, _ in counts]}")
    assert ok


# 9 ---------------------------------------------------------------------------


def test_criterion_9_property_suite(P1, F1, p1_dec, f1_dec):
    t0 = time.perf_counter()
    reps = [F1.base.check_unitarity((3,)), F1.base.check_flat((3,)), P1.base.check_unitarity(())]
    reps += decomp.property_reports(p1_dec)
    reps += decomp.property_reports(f1_dec)
    failed = [r.line() for r in reps if not r.passed]
    ok = not failed and time.perf_counter() - t0 < 900
    record(9, ok, f"{len(reps)} checks, failed: {failed}")
    assert ok, failed


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
