import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from toricqdm import decomp  # noqa: E402
from toricqdm.toric import f1_config, load_toric_bundle, projective_config  # noqa: E402

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def P1():
    return load_toric_bundle(projective_config(2))


@pytest.fixture(scope="session")
def P2():
    return load_toric_bundle(projective_config(3))


@pytest.fixture(scope="session")
def F1():
    return load_toric_bundle(f1_config())


@pytest.fixture(scope="session")
def p1_dec(P1):
    return decomp.compose_decomposition(P1, order=3, param_order=1)


@pytest.fixture(scope="session")
def f1_dec(F1):
    """F1 through (q^2, Q^1) with the sigma_11 direction: the property-suite configuration."""
    return decomp.compose_decomposition(F1, order={"q": 2, "Q": 1}, param_order=1)


@pytest.fixture(scope="session")
def f1_dec_q3(F1):
    """F1 through (q^3, Q^1) for the closed-form comparisons."""
    return decomp.compose_decomposition(F1, order={"q": 3, "Q": 1}, param_order=1, checks=False)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for key in sorted(RESULTS, key=str):
            terminalreporter.write_line(RESULTS[key])
