from fractions import Fraction

import pytest
import sympy as sp

from toricqdm import brown
from toricqdm.series import MissingBaseDerivative
from toricqdm.toric import load_toric_bundle


def test_i_function_normalization(P1, F1):
    for E in (P1, F1):
        I = brown.big_i_function(E, 2, 1)
        assert I.normalization_report().passed


def test_p1_first_order_term(P1):
    """q^1 part of exp(-Pt/z) I for P^1 is 1/((P - l1 + z)(P - l2 + z)) = z^-2 + O(z^-3)."""
    I = brown.i_function(P1, 1)
    q = (1,)
    assert I.series.coeff(q, -2)[0] == P1.ring.one
    assert I.series.coeff(q, -1)[0] == P1.ring.zero


def test_gamma_hat_matches_stirling():
    x = sp.Symbol("x")
    g = brown.gamma_hat(5)
    expo = sum(sp.bernoulli(2 * m) / (2 * m * (2 * m - 1)) * x ** (2 * m - 1) for m in range(1, 4))
    ser = sp.series(sp.exp(expo), x, 0, 6).removeO()
    assert g.tail == [Fraction(str(ser.coeff(x, k))) for k in range(6)]
    assert g.tail_minus()[1] == -Fraction(1, 12)


def test_prefactor_of_gamma_block(P1):
    pre, series = brown.gamma_alpha(P1, (1,), 2)
    assert not pre.is_one()
    # point base: the series part is a scalar in each z-power starting at 1
    assert series[0][0, 0] == 1


@pytest.mark.parametrize("alpha", [(1,), (2,)])
def test_brown_identity_p1_order3(P1, alpha):
    assert brown.check_brown_identity(P1, alpha, order=3, hi=3).passed


def test_m_matrix_dual_path(P1):
    M = brown.m_matrix(P1, order=2, param_order=1, hi=3)
    assert all(r.passed for r in M.reports), [r.line() for r in M.reports]


def test_non_divisor_sigma_direction_raises():
    cfg = {"name": "PP", "k": 1, "N": 2, "c": [[1, 1]], "fixed_points": [[1], [2]], "lambda_classes": ["0", "phi"],
           "base": {"type": "projective", "n": 2}}
    E = load_toric_bundle(cfg)
    with pytest.raises(MissingBaseDerivative):
        brown.big_i_function(E, 1, 1)
