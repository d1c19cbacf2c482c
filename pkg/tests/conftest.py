import pytest

from receptosim.scenario import load_scenario, run


@pytest.fixture(scope="session")
def fig4_output():
    return run(load_scenario("fig4"))
