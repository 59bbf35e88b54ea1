import pytest

_RESULTS: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it.

    ``passed=None`` records a skip and skips the test.
    """

    def check(label: str, passed, detail: str):
        if passed is None:
            _RESULTS.append((label, "SKIP", detail))
            pytest.skip(detail)
        _RESULTS.append((label, "PASS" if passed else "FAIL", detail))
        assert passed, f"{label}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, detail in _RESULTS:
        terminalreporter.write_line(f"{status}  {label}: {detail}")
