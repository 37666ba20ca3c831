import pytest

from serrobust.experiment import build_workspace


@pytest.fixture(scope="session")
def tiny_workspace(tmp_path_factory):
    """A 40-utterance corpus with assets and a frozen degraded copy."""
    root = tmp_path_factory.mktemp("tiny_ws")
    paths = build_workspace(root, size=40, seed=0)
    paths["root"] = str(root)
    return paths


VERDICTS: list = []


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for an acceptance criterion; the line is also printed at the end of the run."""
    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
