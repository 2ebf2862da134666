import pytest

from pgasim import RuntimeConfig, start
from pgasim.addressing import KiB, MiB, SegmentLayout


@pytest.fixture
def rt():
    """Two-node ring with 2 MiB shared segments."""
    runtime = start(RuntimeConfig(segments=SegmentLayout(2 * MiB, 256 * KiB)))
    yield runtime
    runtime.close()


def events(runtime, kind, node=None):
    return [e for e in runtime.sim.trace if e.kind == kind and (node is None or e.node == node)]


ACCEPTANCE: list[tuple[str, bool, str]] = []


def report(criterion: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE.append((criterion, bool(ok), detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
