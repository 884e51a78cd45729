import pytest

from toricqdm.algebra import Presentation, check_presentation
from toricqdm.base_gw import BaseTheory
from toricqdm.series import Box, Ser, VariableScheme
from toricqdm.toric import ConfigError, RankMismatch, load_toric_bundle, projective_config


def test_f1_describe(F1):
    d = F1.describe()
    assert d["rank"] == 4 and d["k"] == 1 and d["N"] == 2
    assert "P - phi - l2" in d["U"]
    assert d["basis"] == ["1", "phi", "P", "P*phi"]


@pytest.mark.parametrize("bundle", ["P1", "P2", "F1"])
def test_toric_data_consistent(bundle, request):
    E = request.getfixturevalue(bundle)
    assert E.check().passed
    assert E.algebra.check().passed


def test_localization_round_trip(F1):
    for a in range(F1.rank):
        v = F1.class_phi(a) if a < 2 else F1.m(F1.class_P(0)) @ F1.class_phi(a - 2)
        back = F1.delocalize(F1.localize(v))
        assert all(x == y for x, y in zip(back, v))


def test_degrees_and_novikov_weights(F1):
    assert F1.degrees == [0, 1, 1, 2]
    assert F1.deg_q(0) == 2 and F1.deg_Q(0) == 1


def test_bad_configs():
    cfg = projective_config(2)
    cfg["c"] = [[1, 1, 1]]
    with pytest.raises(ConfigError):
        load_toric_bundle(cfg)
    cfg = projective_config(2)
    cfg["fixed_points"] = [[1]]
    with pytest.raises(RankMismatch):
        load_toric_bundle(cfg)
    with pytest.raises(ConfigError):
        load_toric_bundle({"k": 1})


def test_presentation_checker_detects_wrong_relation(P1):
    sch = VariableScheme(("q",), ("nov",), (2,))
    box = Box((2,))
    sk = P1.skp
    R = P1.ring
    M0 = sk.array([[0, R.const(-1) * R.lam(1) * R.lam(2)], [1, R.lam(1) + R.lam(2)]])
    A = Ser(sch, box, sk, (2, 2))
    A.c[(0,)] = {0: M0}
    A.c[(1,)] = {0: sk.array([[0, 1], [0, 0]])}
    good = check_presentation(Presentation({"P": A}, {"q": "q"}, ["(P - l1)*(P - l2) - q"]), sk, box)
    bad = check_presentation(Presentation({"P": A}, {"q": "q"}, ["(P - l1)*(P - l2) - 2*q"]), sk, box)
    assert good.passed and not bad.passed


def test_base_theories():
    pt = BaseTheory.point()
    assert pt.rank == 1 and pt.r == 0
    P1 = BaseTheory.projective(1)
    assert P1.check_unitarity((4,)).passed and P1.check_flat((4,)).passed
    assert P1.check_wdvv().passed
    # x^1 coefficient of e^{-tau/z} L for P^1: leading term z^-2
    assert min(P1.Ltilde((1,))) <= -2


def test_unknown_base_class_is_a_config_error():
    cfg = projective_config(2)
    cfg["lambda_classes"] = ["0", "psi"]
    with pytest.raises(ConfigError, match="lambda_classes"):
        load_toric_bundle(cfg)
