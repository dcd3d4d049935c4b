import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rdmhybrid.fci import ground_state  # noqa: E402
from rdmhybrid.integrals import build_h_system, h_chain, hartree_fock  # noqa: E402

# Golden values frozen from the operator-algebra oracle in tests/oracles.py.
H2_FCI_ENERGY = -1.1372759436170645  # H2 / STO-3G, R = 1.4 bohr
H4_FCI_ENERGY = -2.1754111409507524  # linear H4 / STO-3G, spacing 1.8 bohr
H6_FCI_ENERGY = -3.2445173338388114  # linear H6 / STO-3G, spacing 1.8 bohr
H2_HF_ENERGY = -1.1167143250625697

_ACCEPTANCE = {}


def hf_system(n_atoms, spacing):
    return hartree_fock(build_h_system(h_chain(n_atoms, spacing))).integrals


@pytest.fixture(scope="session")
def h2():
    return hf_system(2, 1.4)


@pytest.fixture(scope="session")
def h2_stretched():
    return hf_system(2, 2.8)


@pytest.fixture(scope="session")
def h4():
    return hf_system(4, 1.8)


@pytest.fixture(scope="session")
def h2_fci(h2):
    return ground_state(h2)


@pytest.fixture(scope="session")
def h4_fci(h4):
    return ground_state(h4)


@pytest.fixture
def acceptance(request):
    """Record ``(passed, detail)`` for one acceptance criterion."""

    def record(criterion, passed, detail):
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'} - {detail}"
        _ACCEPTANCE[criterion] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[key])
