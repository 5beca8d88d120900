import sys
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from soar.models import load_default_models  # noqa: E402
from soar.scenario import load_script, run_scenario  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@lru_cache(maxsize=None)
def scenario_run(name: str, static: bool = False, **kw):
    """Cached bundled-scenario runs; treat the result as read-only."""
    return run_scenario(load_script(name), static=static, **kw)


@pytest.fixture(scope="session")
def models():
    return load_default_models()


@pytest.fixture(scope="session")
def ctf_dynamic():
    return scenario_run("ctf_small")


@pytest.fixture(scope="session")
def ctf_static():
    return scenario_run("ctf_small", static=True)


@pytest.fixture(scope="session")
def smoke_capture() -> Path:
    return FIXTURES / "smoke.pcap"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for text in mod.summary_lines():
        terminalreporter.write_line(text)
