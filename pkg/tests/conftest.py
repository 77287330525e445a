import contextlib

import pytest

ACCEPTANCE = pytest.StashKey[dict]()
N_CRITERIA = 10


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance criterion as PASS or FAIL.

    The body appends measured values to the yielded list; they are printed
    with the verdict in the terminal summary.
    """
    results = request.config.stash[ACCEPTANCE]

    @contextlib.contextmanager
    def run(number: int, title: str):
        notes = []
        try:
            yield notes
        except BaseException as e:
            first = (str(e).strip().splitlines() or [type(e).__name__])[0]
            results[number] = (title, False, "; ".join(notes + [first[:200]]))
            raise
        results[number] = (title, True, "; ".join(notes))

    return run


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[ACCEPTANCE]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n not in results:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        title, ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
