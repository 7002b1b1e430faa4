import numpy as np
import pytest

from hcwreach.dynamics import OrbitGameParams
from hcwreach.levelset import DiscTarget, GridSpec, ScalarField, build_target_field
from hcwreach.solver import SolveConfig, ValueFunctionResult, solve


@pytest.fixture(scope="session")
def leo():
    return OrbitGameParams()


@pytest.fixture(scope="session")
def tube300(leo):
    """Default-grid unsafe tube of the collision disc, horizon 300 s (about 70 s)."""
    phi0 = build_target_field(GridSpec.default(), DiscTarget(leo.d_fcc))
    return solve(phi0, leo, SolveConfig(horizon=300.0))


@pytest.fixture(scope="session")
def tube300_file(tube300, tmp_path_factory):
    from hcwreach.levelset import write_field

    path = tmp_path_factory.mktemp("fields") / "tube300.hjf"
    write_field(path, tube300.final)
    return path


@pytest.fixture(scope="session")
def small_spec():
    return GridSpec((-1500.0, -750.0, -5.0, -5.0), (1500.0, 750.0, 5.0, 5.0), (13, 11, 9, 9))


class LinearValue:
    """Stand-in for a value function: phi = c . state + b, exact gradient."""

    def __init__(self, coef, offset=0.0):
        self.coef = np.asarray(coef, dtype=float)
        self.offset = float(offset)

    def value(self, state):
        return float(self.coef @ np.asarray(state, dtype=float) + self.offset), False

    def gradient(self, state, clamp=False):
        return self.coef.copy(), False

    def value_and_gradient(self, state, clamp=False):
        v, _ = self.value(state)
        return v, self.coef.copy(), False


@pytest.fixture
def linear_value():
    return LinearValue


def field_from_function(spec: GridSpec, fn) -> ScalarField:
    x, y, vx, vy = spec.mesh()
    return ScalarField(spec, np.broadcast_to(fn(x, y, vx, vy), spec.shape))


def as_result(field: ScalarField, params=None) -> ValueFunctionResult:
    return ValueFunctionResult(final=field, stats={"horizon": 0.0}, params=params)


# --- acceptance summary ------------------------------------------------------------

_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Record ``(criterion, passed, detail)``; printed after the run."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({title}): {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
