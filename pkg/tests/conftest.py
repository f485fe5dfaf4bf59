import functools

import pytest

from rdfamily import Grid, SolverConfig, assemble_rhs, initial_state, integrate, preset

# Horizon per model: Model 1 runs are documented at t = 40, the others at 80.
HORIZON = {1: 40.0, 2: 80.0, 3: 80.0}
PRESETS = [(m, c) for m in (1, 2, 3) for c in ("healing", "chronic")]

ACCEPTANCE_LINES: dict[int, str] = {}


@functools.lru_cache(maxsize=None)
def preset_run(model_id: int, course: str):
    """Integrate a preset once per test session on the 21x21 grid."""
    grid = Grid.square(21)
    model = preset(model_id, course)
    traj = integrate(assemble_rhs(model, grid), initial_state(model, grid), SolverConfig(HORIZON[model_id]))
    return model, traj


@pytest.fixture(scope="session")
def runs():
    return preset_run


@pytest.fixture
def grid21():
    return Grid.square(21)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
