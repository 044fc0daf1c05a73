from __future__ import annotations

import pytest

CRITERIA = {
    1: "hand-worked seven-item histograms",
    2: "decode agrees with exhaustive search on tiny instances",
    3: "resampled unexplained-mass moments match closed forms",
    4: "score means under perfect history",
    5: "end-to-end recovery and monotone success curve",
    6: "residual gap closed form",
    7: "structural invariants and concentration",
    8: "single-pool multiplicity code round trip",
    9: "multi-label reduction",
}

_results: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion for the end-of-run summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _results[number] = (bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'} criterion {number} ({CRITERIA[number]}): {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, name in CRITERIA.items():
        if number in _results:
            passed, detail = _results[number]
            status = "PASS" if passed else "FAIL"
        else:
            status, detail = "NOT RUN", "deselected or errored before recording"
        terminalreporter.write_line(f"{status} criterion {number} ({name}): {detail}")
