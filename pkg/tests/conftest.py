import numpy as np
import pytest

from ippest.model import model_from_config

# filled by test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number} {name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


def build(cfg):
    return model_from_config(cfg).model


@pytest.fixture(scope="session")
def gamma():
    return build({"family": "gamma"})


@pytest.fixture(scope="session")
def gaussian():
    return build({"family": "gaussian"})


@pytest.fixture(scope="session")
def sine():
    return build({"family": "sine", "A": 1.0, "lambda0": 2.0})


@pytest.fixture(scope="session")
def linear_const():
    """h = 1 on [0, 1], lambda0 = 1."""
    return build({"family": "linear", "basis": ["poly:0"], "lambda0": 1.0})


@pytest.fixture(scope="session")
def linear_t():
    """h(t) = t on [0, 1], lambda0 = 1."""
    return build({"family": "linear", "basis": ["poly:1"], "lambda0": 1.0})


@pytest.fixture(scope="session")
def linear_2d():
    return build({"family": "linear", "basis": ["poly:0", "cos:1"], "lambda0": 1.0,
                  "bounds": {"lower": [0.5, -0.4], "upper": [5.0, 0.4]}})


@pytest.fixture(scope="session")
def families(gamma, gaussian, sine, linear_2d):
    return {"gamma": gamma, "gaussian": gaussian, "sine": sine, "linear": linear_2d}


def random_thetas(model, count, seed=0, shrink=0.05):
    """Points well inside the parameter box."""
    rng = np.random.default_rng(seed)
    lo, hi = np.array(model.space.lower), np.array(model.space.upper)
    pad = shrink * (hi - lo)
    return rng.uniform(lo + pad, hi - pad, size=(count, model.param_dim))


def random_times(model, theta, count, rng):
    lo, hi = model.bounds(theta)
    if model.family == "gamma":
        hi = min(hi, 30.0 / theta[0] + theta[1] / theta[0])
        lo = 1e-3 * hi
    return rng.uniform(lo, hi, size=count)
