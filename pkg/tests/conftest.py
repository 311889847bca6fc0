import pytest

from pairshift.groupstate import reference_instance
from pairshift.pipeline import RouteConfig, run_jfree, run_reeval

# lines appended by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def ref():
    return reference_instance()


@pytest.fixture(scope="session")
def ref_jfree(ref):
    return run_jfree(ref)


@pytest.fixture(scope="session")
def ref_reeval(ref):
    return run_reeval(ref)


@pytest.fixture(scope="session")
def ref_nocleanup(ref):
    return run_jfree(ref, RouteConfig(cleanup=False))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
