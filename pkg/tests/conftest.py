from collections import defaultdict

import pytest

# criterion id -> [(passed, detail)], filled by the acceptance tests
_acceptance = defaultdict(list)


@pytest.fixture
def record():
    def _record(criterion: str, passed: bool, detail: str) -> bool:
        _acceptance[criterion].append((bool(passed), detail))
        print(f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}")
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_acceptance, key=lambda c: int(c[2:])):
        parts = _acceptance[criterion]
        ok = all(p for p, _ in parts)
        detail = " | ".join(d for _, d in parts)
        terminalreporter.write_line(f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}")
