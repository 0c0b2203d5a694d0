import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from opfbench.caseparser import parse_case
from opfbench.grid import build_network, load_network

settings.register_profile(
    "opfbench", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "opfbench"))

FIXTURES = Path(__file__).parent / "fixtures"
CACHE = Path(os.environ.get("OPFBENCH_TEST_CACHE", Path(__file__).resolve().parents[1] / ".cache"))

# y_s = 1 - 5j  <=>  r + jx = (1 + 5j) / 26
TWO_BUS = """\
function mpc = twobus
mpc.version = '2';
mpc.baseMVA = 100;
%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1	0	135	1	1.1	0.9;
	2	1	50	20	0	0	1	1	0	135	1	1.1	0.9;
];
%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax
mpc.branch = [
	1	2	0.038461538461538464	0.19230769230769232	0	0	0	0	0	0	1	-360	360;
];
%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin
mpc.gen = [
	1	0	0	300	-300	1	100	1	250	0;
];
mpc.gencost = [
	2	0	0	3	0.02	3	0;
];
"""


def two_bus_text(**subs):
    text = TWO_BUS
    for old, new in subs.items():
        text = text.replace(old, new)
    return text


@pytest.fixture(scope="session")
def two_bus():
    return build_network(parse_case(TWO_BUS))


@pytest.fixture(scope="session")
def ieee30():
    return load_network("case_ieee30")


@pytest.fixture(scope="session")
def case30():
    return load_network("case30")


@pytest.fixture(scope="session")
def case9():
    return load_network("case9")


@pytest.fixture(scope="session")
def case118():
    return load_network("case118")


@pytest.fixture(scope="session")
def small_ds(ieee30):
    """60 solved case_ieee30 samples; cheap enough to build per session."""
    from opfbench.datagen import generate_dataset

    return generate_dataset(ieee30, 60, seed=3, threads=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# filled by test_acceptance; one line per criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
