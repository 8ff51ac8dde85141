import numpy as np
import pytest

from chargetime.physics import ChargingScenario, PhysicsParams, VehicleSpec
from chargetime.simulator import SimulatorConfig, generate_dataset, stratified_split

# one pass/fail line per acceptance criterion, printed at the end of the run
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = ""):
    ACCEPTANCE_RESULTS.append((name, passed, detail))
    status = "PASS" if passed else "FAIL"
    print(f"[acceptance] {status} {name} {detail}")
    assert passed, f"{name}: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  {detail}")


@pytest.fixture(scope="session")
def mid_vehicle():
    return VehicleSpec(c_bat_nom=75.0, p_max_nom=150.0, v_nom=400.0, p_cable=250.0)


@pytest.fixture(scope="session")
def mid_scenario(mid_vehicle):
    return ChargingScenario(s_ini=0.2, s_final=0.9, p_station=150.0, soh=1.0,
                            t_amb=25.0, vehicle=mid_vehicle)


@pytest.fixture(scope="session")
def small_dataset():
    """240 noisy sessions with splits; shared by the model-level tests."""
    ds = generate_dataset(240, SimulatorConfig(seed=123))
    train, val, test = stratified_split(ds, (0.64, 0.16, 0.20), seed=123)
    return train, val, test


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def default_params():
    return PhysicsParams()
