import pytest

_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record a pass/fail line for an acceptance criterion before asserting on it."""

    def record(label: str, ok: bool, detail: str = "") -> bool:
        _RESULTS[label] = (bool(ok), detail)
        return bool(ok)

    return record


def _key(label: str):
    head = label.split()[0]
    num = "".join(ch for ch in head if ch.isdigit())
    return (int(num) if num else 0, label)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_RESULTS, key=_key):
        ok, detail = _RESULTS[label]
        terminalreporter.write_line(f"CRITERION {label}: {'PASS' if ok else 'FAIL'} {detail}")
