import sys
from functools import lru_cache
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@lru_cache(maxsize=None)
def plan_for(d: int, spacing: float = 0.5):
    from combaccel.resonator import plan_wavelengths

    return plan_wavelengths(d, 1550.0, spacing)


@lru_cache(maxsize=None)
def cfg_for(d: int, bits: int = 4):
    from combaccel.config import AccelConfig

    return AccelConfig(d=d, bits=bits)


@pytest.fixture(params=["numpy", "numba"])
def backend_name(request):
    if request.param == "numba":
        pytest.importorskip("numba")
    return request.param


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
