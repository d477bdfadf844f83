import pytest
from hypothesis import settings

from hscs import kinematics as kin

settings.register_profile("hscs", deadline=None, max_examples=60)
settings.load_profile("hscs")


@pytest.fixture(scope="session")
def model():
    """The reference system m = (1, 2, 1), Z = (1, 2)."""
    return kin.build_system(1, 2, 1, 1, 2)


@pytest.fixture(scope="session")
def one_centre():
    return kin.build_system(1, 2, 1, 1, 0, allow_zero_charge=True)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
