"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary."""

import pytest

CRITERIA = {
    1: "gradient suite at 64-bit",
    2: "Laplacian spectrum oracle",
    3: "residual identity with zeroed encoders",
    4: "uniformity loss spreads embeddings",
    5: "freeze soundness after prompt-tune",
    6: "synthetic adaptation ordering",
    7: "complexity slopes",
    8: "cross region-count transfer",
    9: "format round trips and magic errors",
    10: "-Uni ablation sanity (soft)",
}

# criterion -> list of (passed, detail)
_outcomes: dict[int, list[tuple[bool, str]]] = {}
# soft criteria report their verdict explicitly instead of failing the run
_soft: dict[int, tuple[bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.fixture
def soft_verdict():
    def record(criterion: int, passed: bool, detail: str) -> None:
        _soft[criterion] = (passed, detail)
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = item.name if report.passed else f"{item.name}: {report.longreprtext.splitlines()[-1:] or ''}"
        _outcomes.setdefault(n, []).append((report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes and not _soft:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        runs = _outcomes.get(n)
        if n in _soft:
            passed, detail = _soft[n]
        elif runs:
            passed = all(ok for ok, _ in runs)
            detail = "; ".join(d for ok, d in runs if not ok) or f"{len(runs)} check(s)"
        else:
            terminalreporter.write_line(f"SKIP criterion {n:2d} ({title}): not run")
            continue
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {n:2d} ({title}): {detail}")
