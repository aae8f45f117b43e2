import pytest

from traitalign import ndcore as nd


@pytest.fixture(autouse=True)
def _debug_checks():
    nd.set_check_mode("debug")
    yield
    nd.set_check_mode("debug")


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
