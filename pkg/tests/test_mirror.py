from fractions import Fraction

import pytest

from toricqdm import mirror
from toricqdm.coeffs import LambdaRing, Loc


@pytest.mark.parametrize("alpha", [(1,), (2,), (3,)])
def test_every_p2_chart_is_consistent(P2, alpha):
    m = mirror.chart_build(P2, alpha)
    assert m.substitution_check().passed
    br = mirror.critical_branch(m, 3)
    assert br.residual_report().passed
    assert br.homogeneity_report().passed


def test_f1_branches(F1):
    for alpha in F1.F:
        br = mirror.critical_branch(mirror.chart_build(F1, alpha), 2)
        assert br.residual_report().passed, alpha


def test_wrong_chart_size_is_rejected(P1):
    with pytest.raises(mirror.MirrorError):
        mirror.chart_build(P1, (1, 2))


def test_stationary_phase_normalization(P1):
    m = mirror.chart_build(P1, (1,))
    sp_ = mirror.stationary_phase(m, mirror.critical_branch(m, 3), 2)
    assert sp_.normalization_report().passed
    assert sp_.envelope_report().passed


def test_gamma_stationary_phase_leading_terms():
    assert mirror.gamma_stationary_phase(2) == [1, Fraction(1, 12), Fraction(1, 288)]


def test_qseries_inverse_and_log_exp():
    R = LambdaRing(1)
    x = mirror.QSeries.monomial(R, (4,), (1,), 1)
    one = x.one()
    assert (one + x) * (one + x).inverse() == one
    assert x.log1p().exp() == one + x


def test_qseries_zero_constant_is_not_invertible():
    R = LambdaRing(1)
    x = mirror.QSeries.monomial(R, (3,), (1,), Loc(R, R.lam(1)))
    with pytest.raises(mirror.SingularLinearSolve):
        x.inverse()


def test_degenerate_parameters_are_detected(P1):
    # prod (x - l_j) = q has a double root when q = -(l1 - l2)^2 / 4
    with pytest.raises(mirror.DegenerateParameters):
        mirror.critical_count_numeric(P1, -1.0, [1.0, -1.0])


def test_non_projective_fiber_is_unsupported():
    with pytest.raises(mirror.Unsupported):
        mirror.critical_count_numeric([[1, 2]], 1.0, [0.3, 0.7])


def test_generic_samples_have_full_count():
    for q, lam in mirror.generic_samples(3, 3, seed=7):
        c = mirror.critical_count_numeric([[1, 1, 1]], q, lam)
        assert c.count == c.expected == 3
