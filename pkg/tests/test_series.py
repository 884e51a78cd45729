from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from toricqdm.coeffs import LambdaRing
from toricqdm.series import (INF, Box, ScalarKind, Ser, VariableScheme, WindowOverflow, series_exp, series_inverse,
                             vzero)

R = LambdaRing(1)
SK = ScalarKind(R, "poly")
SCH = VariableScheme(("q", "s"), ("nov", "par"), (Fraction(2), Fraction(-1)))
BOX = Box((2, 1), None, 1)

entries = st.integers(-2, 2)


@st.composite
def matrix_series(draw, zmin=-1, zmax=1, exact_identity=True):
    S = Ser(SCH, BOX, SK, (2, 2))
    for m in BOX.monos(SCH):
        d = {}
        for n in range(zmin, zmax + 1):
            M = SK.array([[draw(entries) for _ in range(2)] for _ in range(2)])
            if not vzero(M):
                d[n] = M
        S.c[m] = d
    if exact_identity:
        S.c[SCH.zero_mono()] = {0: SK.eye(2)}
    return S


@given(matrix_series(), matrix_series(), matrix_series())
def test_product_associative(a, b, c):
    assert not a.mul(b).mul(c).residual_keys(a.mul(b.mul(c)))


@given(matrix_series())
def test_inverse(a):
    inv = series_inverse(a)
    one = Ser.constant(SCH, BOX, SK, SK.eye(2))
    assert not a.mul(inv).residual_keys(one)
    assert not inv.mul(a).residual_keys(one)


def test_exp_of_commuting_pair_is_inverse():
    X = Ser(SCH, BOX, SK, (2, 2))
    X.c[SCH.unit("q")] = {-1: SK.array([[0, 1], [0, 0]]), 0: SK.eye(2)}
    prod = series_exp(X).mul(series_exp(-X))
    assert not prod.residual_keys(Ser.constant(SCH, BOX, SK, SK.eye(2)))


def test_window_reads_are_strict():
    S = Ser(SCH, BOX, SK, ())
    S.c[SCH.unit("q")] = {0: R.one}
    S.w[SCH.unit("q")] = (-3, INF)
    assert S.coeff(SCH.unit("q"), -3) == R.zero
    with pytest.raises(WindowOverflow):
        S.coeff(SCH.unit("q"), -4)


def test_product_window_rule():
    """(known down to z^-3) * z^-1 is known down to z^-4 only."""
    A = Ser(SCH, BOX, SK, ())
    A.c[SCH.unit("q")] = {0: R.one}
    A.w[SCH.unit("q")] = (-3, INF)
    B = Ser.constant(SCH, BOX, SK, R.one, z=-1)
    P = A.mul(B)
    assert P.window(SCH.unit("q")) == (-4, INF)


def test_euler_and_ordinary_derivatives():
    S = Ser(SCH, BOX, SK, ())
    m = (2, 1)
    S.c[m] = {0: R.one}
    assert S.deriv("q", True).coeff(m, 0) == R.const(2)
    d = S.deriv("s", False)
    assert d.coeff((2, 0), 0) == R.one
    assert d.box.caps[1] == 0


def test_json_is_stable():
    S = Ser(SCH, BOX, SK, (2,))
    S.c[(1, 0)] = {-1: SK.array([R.lam(1), R.zero])}
    assert S.to_json(basis=["a", "b"]) == [{"novikov": [1], "param": [0], "z": -1, "coeff": {"a": "l1"}}]
