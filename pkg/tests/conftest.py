import pathlib

import pytest

from stlcbf.scenario import load_scenario
from stlcbf.simulate import run_scenario

REPO = pathlib.Path(__file__).resolve().parents[1]
SEC4_SCENARIO = REPO / "scenarios" / "paper_sec4.json"


@pytest.fixture(scope="session")
def sec4_cfg():
    return load_scenario(SEC4_SCENARIO)


@pytest.fixture(scope="session")
def sec4_run(sec4_cfg):
    """One shared closed-loop run of the main scenario (dt = 0.005)."""
    return run_scenario(sec4_cfg)
