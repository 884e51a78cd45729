import dataclasses
import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from toricqdm import decomp
from toricqdm.coeffs import LambdaRing
from toricqdm.series import Box, ScalarKind, Ser, VariableScheme

from conftest import GOLDEN

R = LambdaRing(1)
SK = ScalarKind(R, "poly")
SCH = VariableScheme(("q",), ("nov",), (Fraction(2),))
BOX = Box((3,))
entries = st.integers(-2, 2)


def ident():
    return Ser.constant(SCH, BOX, SK, SK.eye(2))


def mat(draw):
    return SK.array([[draw(entries) for _ in range(2)] for _ in range(2)])


@st.composite
def factor_pair(draw):
    Lm, Rp = ident(), ident()
    for k in range(1, 4):
        Lm.c[(k,)] = {n: mat(draw) for n in (-2, -1)}
        Rp.c[(k,)] = {n: mat(draw) for n in (0, 1)}
    return Lm, Rp


def test_birkhoff_of_identity():
    res = decomp.birkhoff_factorize(ident())
    assert not res.L_minus.residual_keys(ident()) and not res.R.residual_keys(ident())


def test_birkhoff_splits_a_first_order_term():
    A, B, C = SK.array([[1, 2], [0, 1]]), SK.array([[0, 1], [1, 0]]), SK.array([[3, 0], [0, -1]])
    L = ident()
    L.c[(1,)] = {-1: A, 0: B, 1: C}
    res = decomp.birkhoff_factorize(L)
    # first order only: q^2 and beyond pick up products of the two parts
    assert set(res.L_minus.c[(1,)]) == {-1} and (res.L_minus.c[(1,)][-1] == A).all()
    assert set(res.R.c[(1,)]) == {0, 1} and (res.R.c[(1,)][0] == B).all() and (res.R.c[(1,)][1] == C).all()
    assert not res.product().residual_keys(L)


@given(factor_pair())
def test_birkhoff_round_trip(pair):
    Lm, Rp = pair
    res = decomp.birkhoff_factorize(Lm.mul(Rp, "@"))
    assert not res.L_minus.residual_keys(Lm)
    assert not res.R.residual_keys(Rp)
    assert decomp.birkhoff_idempotence(res).passed


def test_birkhoff_rejects_non_identity_leading_term():
    L = Ser.constant(SCH, BOX, SK, SK.array([[2, 0], [0, 1]]))
    with pytest.raises(decomp.NonInvertibleLeadingTerm):
        decomp.birkhoff_factorize(L)
    with pytest.raises(ValueError):
        decomp.birkhoff_factorize(ident(), "middle")


def test_birkhoff_at_zero_rejects_negative_powers():
    L = ident()
    L.c[(0,)] = {0: SK.eye(2), -1: SK.eye(2)}
    with pytest.raises(decomp.Unsupported):
        decomp.birkhoff_factorize(L, "zero")


# mirror map ------------------------------------------------------------------


def test_p1_mirror_map_is_trivial(p1_dec):
    md = p1_dec.mirror
    lay = md.layout
    assert not decomp.sigma_zero(lay, md.w).residual_keys()
    assert decomp.mirror_normalization_report(md).passed


def test_gauge_factor(p1_dec, f1_dec):
    """On P^1 grading forces Rhat = Id; on F1 it first moves at q Q sigma."""
    assert [m for m, _, _ in p1_dec.mirror.R_hat.items()] == [(0,)]
    monos = {m for m, n, _ in f1_dec.mirror.R_hat.items() if n == 0}
    assert monos == {(0, 0, 0), (1, 1, 1)}


def test_reversion_inverts_the_mirror_map(f1_dec):
    md = f1_dec.mirror
    lay = md.layout
    w0 = decomp.sigma_zero(lay, md.w)
    Q = md.y_of_yhat["Q"]
    # yhat = y exp(w(y)): substituting y(yhat) into y exp(w) gives back the hatted variable
    a = decomp._nov_coordinate(lay, "Q")
    comp = w0.map_values(lambda v: v[a], shape=())
    back = Q.mul(decomp.series_exp(decomp.substitute(comp, md.y_of_yhat), "*"), "*")
    unit = Ser(Q.scheme, Q.box, Q.sk, (), strict=Q.strict)
    unit.c[Q.scheme.unit("Q")] = {0: Q.sk.one()}
    assert not back.residual_keys(unit)


# composed decomposition --------------------------------------------------------


@pytest.mark.parametrize("fixture", ["p1_dec", "f1_dec"])
def test_pairing_and_classical_limit(fixture, request):
    dec = request.getfixturevalue(fixture)
    assert decomp.check_pairing_decomposition(dec).passed
    assert decomp.classical_limit_report(dec).passed
    assert decomp.jacobian_classical_report(dec).passed


def test_grading_audits(f1_dec):
    reps = decomp.homogeneity_reports(f1_dec)
    assert reps and all(r.passed for r in reps), [r.line() for r in reps if not r.passed]


def test_f1_output_matches_golden(f1_dec):
    gold = json.loads((GOLDEN / "f1_q2Q1.json").read_text())
    out = json.loads(json.dumps(f1_dec.to_json(), sort_keys=True))
    sections = gold.get("decomposition", gold)
    for key in ("sigma_hat", "r_hat", "tau_star", "chi_tau", "chi_r"):
        assert out[key] == sections[key], key


def test_flatness_negative_control(f1_dec):
    md, qp = f1_dec.mirror, f1_dec.qp
    lay = md.layout
    dirs = [None if lay.direction(a)[0] is None else lay.direction(a) for a in range(2)]
    assert decomp.check_flatness(qp.A[:2], dirs, "A^E").passed
    bump = Ser.constant(qp.A[0].scheme, qp.A[0].box, qp.A[0].sk, qp.A[0].sk.eye(qp.A[0].shape[0]))
    bump = bump.mul(Ser.constant(bump.scheme, bump.box, bump.sk, bump.sk.one()), "*")
    q = bump.scheme.unit("q")
    anti = qp.A[0].sk.zeros(qp.A[0].shape)
    anti[0, 1] = qp.A[0].sk.one()
    wrong = Ser(bump.scheme, bump.box, bump.sk, qp.A[0].shape, strict=qp.A[0].strict)
    wrong.c[q] = {0: anti}
    assert not decomp.check_flatness([qp.A[0] + wrong, qp.A[1]], dirs, "perturbed").passed


def test_nonequivariant_limits(f1_dec):
    reps = decomp.nonequivariant_checks(f1_dec.qp)
    assert all(r.passed for r in reps), [r.line() for r in reps]
    assert not decomp.f1_closed_form_homomorphism(1, corrected=False).passed


def test_gauge_negative_control(p1_dec):
    md, qp = p1_dec.mirror, p1_dec.qp
    AI = decomp.connection_I(md)
    assert decomp.gauge_report(md, AI, qp).passed
    R = md.R_hat
    wrong = Ser(R.scheme, R.box, R.sk, R.shape, strict=R.strict)
    off = R.sk.zeros(R.shape)
    off[1, 0] = R.sk.one()
    wrong.c[R.scheme.unit("q")] = {0: off}
    bad_bf = dataclasses.replace(md.birkhoff, R=R + wrong)
    assert not decomp.gauge_report(dataclasses.replace(md, birkhoff=bad_bf), AI, qp).passed
