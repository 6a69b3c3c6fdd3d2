import pytest

N_CRITERIA = 11


def pytest_configure(config) -> None:
    config.acceptance = {}


@pytest.fixture
def record(request):
    """Store a criterion verdict; several calls for one criterion are combined."""
    def _record(n: int, ok: bool, detail: str = "") -> None:
        prev = request.config.acceptance.get(n)
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}"
        request.config.acceptance[n] = (ok, detail)
    return _record


def pytest_terminal_summary(terminalreporter, config) -> None:
    results = getattr(config, "acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        ok, detail = results.get(n, (False, "did not complete"))
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
