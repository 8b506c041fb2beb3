import warnings

import pytest

from nltva.continuation import continue_branch, find_drc
from nltva.hbm import as_system
from nltva.model import TABLE1

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture(scope="session")
def table1_system():
    return as_system(TABLE1)


@pytest.fixture(scope="session")
def main_branch(table1_system):
    """Main frequency-response branch at forcing ``F`` (cached per session)."""
    cache = {}

    def get(F):
        if F not in cache:
            cache[F] = continue_branch(table1_system, F, (0.5, 3.0))
        return cache[F]

    return get


@pytest.fixture(scope="session")
def drc_015(table1_system, main_branch):
    return find_drc(table1_system, 0.15, (0.5, 3.0), main=main_branch(0.15))


@pytest.fixture(scope="session")
def table1_loci():
    from nltva.tracking import compute_loci
    return compute_loci(TABLE1, (0.01, 0.3))


# -- acceptance reporting ------------------------------------------------------

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdicts(pytestconfig):
    """Collect one PASS/FAIL line per acceptance criterion and echo it live."""
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")

    def record(line):
        _VERDICTS.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
