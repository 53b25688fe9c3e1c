import pytest

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion.

    The line is printed when the criterion is evaluated and repeated in the
    terminal summary, so it survives output capture.
    """
    log = request.config.stash.setdefault(_RESULTS, {})

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        log[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_RESULTS, {})
    if not log:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(log):
        terminalreporter.write_line(log[number])
