import numpy as np
import pytest

from pltmap.tissue import CellParams, StimulusProtocol, TissueGeometry, run_simulation


@pytest.fixture(scope="session")
def params():
    return CellParams()


@pytest.fixture(scope="session")
def single_wave():
    """One wave on a 1024-node strand (D = 4), 1600 ms at 1 kHz."""
    geom = TissueGeometry.strand(4.0)
    return run_simulation(geom, StimulusProtocol.single(), duration=1600.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def record(request):
    """record(n, ok, detail): keep a PASS/FAIL line for the summary, then assert ok."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    def _record(n, ok, detail):
        lines[str(n)] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, lines[str(n)]
    return _record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
