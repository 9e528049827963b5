import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from backend.Common import config
from backend.Common.engineUtils import BUNDLED_CASE, CASES_DIR, load_case
from backend.Models.grid_model import Branch, Bus, Generator, LoadModel, NetworkCase
from backend.Models.machine_dynamics import MachineParams
from backend.sim_engine import initialize

config.SHOW_PROGRESS = False


def classical_machine(h=3.5, xd_p=0.3):
    return MachineParams(h=h, d=0.0, xd=1.8, xq=1.7, xd_p=xd_p, xq_p=xd_p, td0_p=8.0, model="classical")


def make_smib(p_gen=0.8, x_line=0.5, h=3.5, xd_p=0.3, v_gen=1.0):
    """Classical machine on bus 1 feeding an infinite bus (slack without a unit) on bus 2."""
    return NetworkCase(
        name="smib",
        buses=[Bus(id=1, kind="pv", voltage_mag=v_gen), Bus(id=2, kind="slack", voltage_mag=1.0)],
        branches=[Branch(from_bus=1, to_bus=2, series_x=x_line)],
        generators=[Generator(id=1, bus=1, p_gen=p_gen, machine=classical_machine(h, xd_p))],
    )


def make_two_machine(p_gen=0.5, x_line=0.4):
    """Two classical machines joined by a lossless line, no loads."""
    return NetworkCase(
        name="two_machine",
        buses=[Bus(id=1, kind="slack", voltage_mag=1.0), Bus(id=2, kind="pv", voltage_mag=1.0)],
        branches=[Branch(from_bus=1, to_bus=2, series_x=x_line)],
        generators=[
            Generator(id=1, bus=1, machine=classical_machine(h=4.0)),
            Generator(id=2, bus=2, p_gen=p_gen, machine=classical_machine(h=3.0)),
        ],
    )


def make_three_bus():
    """Slack plus two PQ buses in a loop, lossy lines."""
    return NetworkCase(
        name="three_bus",
        buses=[Bus(id=1, kind="slack", voltage_mag=1.02), Bus(id=2), Bus(id=3)],
        branches=[
            Branch(from_bus=1, to_bus=2, series_r=0.02, series_x=0.08, shunt_b=0.02),
            Branch(from_bus=2, to_bus=3, series_r=0.01, series_x=0.06, shunt_b=0.01),
            Branch(from_bus=1, to_bus=3, series_r=0.03, series_x=0.10, tap=0.98),
        ],
        loads=[LoadModel(bus=2, p0=0.6, q0=0.2), LoadModel(bus=3, p0=0.4, q0=0.15)],
    )


@pytest.fixture
def smib_case():
    return make_smib()


@pytest.fixture
def two_machine_case():
    return make_two_machine()


@pytest.fixture
def three_bus_case():
    return make_three_bus()


@pytest.fixture(scope="session")
def two_area_case():
    return load_case(BUNDLED_CASE)


@pytest.fixture(scope="session")
def trip_scenario_path():
    return os.path.join(CASES_DIR, "trip_g3.json")


@pytest.fixture(scope="module")
def two_area_system(two_area_case):
    return initialize(two_area_case, pss={})
