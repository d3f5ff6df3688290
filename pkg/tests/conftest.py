import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from _registry import ACCEPTANCE, SOLVE_LOG
from tsebct import balance

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Every WeightSolution built anywhere in the suite is checked for positive,
# normalised weights; the acceptance suite reads the log.

_original_init = balance.WeightSolution.__init__


def _checked_init(self, *args, **kwargs):
    _original_init(self, *args, **kwargs)
    w = np.asarray(self.weights, dtype=float)
    SOLVE_LOG["count"] += 1
    if not (np.all(w > 0) and abs(w.sum() - 1.0) < 1e-10):
        SOLVE_LOG["violations"].append(
            (self.method, float(w.min()) if w.size else float("nan"), float(w.sum() - 1.0))
        )


balance.WeightSolution.__init__ = _checked_init


@pytest.fixture(autouse=True)
def _weights_stay_valid():
    before = len(SOLVE_LOG["violations"])
    yield
    new = SOLVE_LOG["violations"][before:]
    assert not new, f"invalid weights produced: {new}"


def pytest_collection_modifyitems(items):
    # acceptance runs last so its weight-invariant check sees the whole suite
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
    terminalreporter.write_line(
        f"weight invariant checked on {SOLVE_LOG['count']} solves, "
        f"{len(SOLVE_LOG['violations'])} violations"
    )
