import os
import sys
from functools import lru_cache
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from fastrot.kernel import init
from fastrot.model import SystemSpec
from fastrot.protocols import make_protocol

settings.register_profile("fastrot", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fastrot"))

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures"
GOLDEN = HERE / "golden"
ROOT = HERE.parent
SCENARIOS = ROOT / "scenarios"


@lru_cache(maxsize=None)
def c0_for(protocol_name: str, ring: int = 0, **params):
    """C_0 is immutable, so one per (protocol, system) is shared across tests."""
    proto = make_protocol(protocol_name, **params)
    spec = SystemSpec.ring_spec(ring) if ring else SystemSpec.disjoint_spec()
    return init(spec, proto)


@pytest.fixture
def two_servers():
    return SystemSpec.disjoint_spec()


@pytest.fixture
def ring3():
    return SystemSpec.ring_spec(3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
