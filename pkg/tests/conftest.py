import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cyberder.feeder import load_feeder  # noqa: E402
from cyberder.linmodel import linearize_analytic  # noqa: E402

REPO = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG = REPO / "configs" / "default.json"


@pytest.fixture(scope="session")
def feeder2():
    return load_feeder("bundled:feeder2")


@pytest.fixture(scope="session")
def feeder6():
    return load_feeder("bundled:feeder6")


@pytest.fixture(scope="session")
def ieee37():
    return load_feeder("bundled:ieee37")


@pytest.fixture(scope="session")
def model37(ieee37):
    return linearize_analytic(ieee37)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one ``[PASS]``/``[FAIL]`` line; the lines are echoed after the run."""

    def record(number, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
