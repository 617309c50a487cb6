import pytest

from craci.trust import TrustAuthority


@pytest.fixture
def authority():
    return TrustAuthority()


@pytest.fixture
def token(authority):
    return authority.issue_token("tester", {"tester"}, 10**9, 0)


_ACCEPTANCE: dict[int, tuple] = {}


@pytest.fixture
def acceptance():
    """Record the outcome of one acceptance criterion; returns ``ok``."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}")
