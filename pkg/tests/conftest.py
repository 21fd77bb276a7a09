import numpy as np
import pytest


def random_orthonormal(rng, m, r):
    Q, _ = np.linalg.qr(rng.normal(size=(m, r)))
    return Q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance results, printed together at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
