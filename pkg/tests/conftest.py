import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the verdict line for an acceptance criterion; returns ``ok``."""

    def record(num: int, ok: bool, title: str, detail: str, seconds: float) -> bool:
        _CRITERIA[num] = f"criterion {num:2d}  {'PASS' if ok else 'FAIL'}  {title}: {detail}  [{seconds:.1f} s]"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[k])
