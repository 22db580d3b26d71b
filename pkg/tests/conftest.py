import numpy as np
import pytest

from multiuav.model import Scenario

# constants used across the suite
P_MAX = 0.1
RHO0 = 1e-6
H = 100.0
SIGMA2 = 1e-14
HOVER_RATE = np.log2(1001.0)  # K=1 full power directly overhead


def random_scenario(seed, num_users=3, num_uavs=2, period=30.0, num_slots=None,
                    half_width=400.0, **kw):
    rng = np.random.default_rng(seed)
    users = rng.uniform(-half_width, half_width, (num_users, 2))
    if num_slots is None:
        num_slots = int(np.ceil(period / num_uavs) * num_uavs)
    return Scenario(users, num_uavs=num_uavs, period=period, num_slots=num_slots, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: number -> (passed, detail)
ACCEPTANCE = {}


def record(number, passed, detail=""):
    ACCEPTANCE[number] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}"
                                    + (f"  {detail}" if detail else ""))
