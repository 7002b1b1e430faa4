import math

import numpy as np
import pytest

from conftest import field_from_function
from hcwreach.dynamics import OrbitGameParams
from hcwreach.levelset import BoxTarget, DiscTarget, GridSpec, build_target_field, field_to_bytes
from hcwreach.solver import (
    NumericalFailure,
    SolveConfig,
    brt_membership,
    disturbance_sensitivity,
    dissipation_coefficients,
    solve,
    stable_dt,
)
import hcwreach.solver as solver_mod

SPEC = GridSpec((-1500.0, -750.0, -5.0, -5.0), (1500.0, 750.0, 5.0, 5.0), (13, 11, 9, 9))
# zero mean motion on a grid where only the (x, vx) pair matters
DI_SPEC = GridSpec((-1000.0, -100.0, -5.0, -1.0), (1000.0, 100.0, 5.0, 1.0), (41, 3, 41, 3))
X_BAND = BoxTarget.from_mapping({"x": (-200.0, 200.0)})


@pytest.fixture(scope="module")
def disc0():
    return build_target_field(SPEC, DiscTarget(200.0))


@pytest.fixture(scope="module")
def small_tube(disc0):
    return solve(disc0, OrbitGameParams(), SolveConfig(horizon=60.0, save_every=20.0))


@pytest.mark.parametrize(
    "kwargs",
    [dict(horizon=-1.0), dict(cfl=0.0), dict(cfl=1.5), dict(save_every=0.0), dict(convergence_eps=-1.0), dict(mode="x")],
)
def test_solve_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolveConfig(**kwargs)


def test_zero_horizon_returns_target(disc0):
    res = solve(disc0, OrbitGameParams(), SolveConfig(horizon=0.0))
    assert res.final == disc0
    assert res.stats["steps"] == 0


def test_no_dynamics_is_stationary():
    spec = GridSpec((-1, -1, 0, 0), (1, 1, 1e-30, 1e-30), (3, 3, 3, 3))
    phi0 = field_from_function(spec, lambda x, y, vx, vy: x + y + 0 * vx)
    p = OrbitGameParams(omega=0.0, u_max=0.0, d_max=0.0)
    alpha = dissipation_coefficients(spec, p)
    assert alpha[2] == alpha[3] == 0.0
    res = solve(phi0, p, SolveConfig(horizon=10.0))
    assert np.allclose(res.final.values, phi0.values, atol=1e-20)


def test_stable_dt_formula():
    alpha = dissipation_coefficients(SPEC, OrbitGameParams())
    dt = stable_dt(SPEC, alpha, 0.5)
    assert dt == pytest.approx(0.5 / np.sum(alpha / SPEC.spacing))
    assert math.isinf(stable_dt(SPEC, np.zeros(4), 0.5))


def test_stats_and_checkpoints(small_tube):
    s = small_tube.stats
    for key in ("alpha", "dt", "steps", "horizon", "mode", "cfl", "max_updates", "final_time"):
        assert key in s
    assert s["final_time"] == pytest.approx(60.0)
    times = [t for t, _ in small_tube.checkpoints]
    assert times == pytest.approx([0.0, 20.0, 40.0, 60.0])
    assert small_tube.checkpoints[-1][1] is small_tube.final
    assert small_tube.checkpoint_at(45.0) is small_tube.checkpoints[2][1]
    assert len(s["max_updates"]) == s["steps"]


def test_tube_below_target_and_monotone_in_time(small_tube, disc0):
    assert np.all(small_tube.final.values <= disc0.values + 1e-9)
    fields = [f.values for _, f in small_tube.checkpoints]
    for a, b in zip(fields, fields[1:]):
        assert np.all(b <= a + 1e-9)


def test_tube_below_set_mode(disc0):
    p = OrbitGameParams()
    tube = solve(disc0, p, SolveConfig(horizon=40.0, mode="tube"))
    plain = solve(disc0, p, SolveConfig(horizon=40.0, mode="set"))
    assert np.all(tube.final.values <= plain.final.values + 1e-9)


def test_single_step_is_monotone_in_the_interior(disc0):
    # with alpha >= |dH/dp| and CFL <= 1 one explicit step preserves ordering;
    # the extrapolated boundary layer is excluded
    p = OrbitGameParams()
    alpha = dissipation_coefficients(SPEC, p)
    dt = stable_dt(SPEC, alpha, 1.0)
    stepper = solver_mod._Stepper(SPEC, p, alpha)
    rng = np.random.default_rng(0)
    hi = disc0.values + rng.normal(0, 20, size=SPEC.shape)
    lo = hi - rng.uniform(0, 30, size=SPEC.shape)
    step = lambda v: v + dt * stepper.rate(v)  # noqa: E731
    inner = (slice(1, -1),) * 4
    assert np.all(step(lo)[inner] <= step(hi)[inner] + 1e-9)


def test_stronger_disturbance_lowers_value(disc0):
    p = OrbitGameParams()
    cfg = SolveConfig(horizon=40.0)
    weak, strong = disturbance_sensitivity(disc0, p, cfg, [0.0, 0.05])
    assert np.all(strong.final.values <= weak.final.values + 1e-9)
    with pytest.raises(ValueError):
        disturbance_sensitivity(disc0, p, cfg, [0.05, 0.0])


def test_pure_transport_tube():
    """Zero inputs, zero mean motion: x moves at constant vx."""
    p = OrbitGameParams(omega=0.0, u_max=0.0, d_max=0.0)
    phi0 = build_target_field(DI_SPEC, X_BAND)
    res = solve(phi0, p, SolveConfig(horizon=60.0))
    x, _, vx, _ = DI_SPEC.mesh()
    # reaches |x| <= 200 within 60 s iff the segment [x, x + 60 vx] meets the band
    end = x + 60.0 * vx
    lo, hi = np.minimum(x, end), np.maximum(x, end)
    exact = ((lo <= 200.0) & (hi >= -200.0)) + 0 * res.final.values
    inside = res.final.values <= 0
    wrong = inside != exact
    # disagreements only within two cells of the analytic boundary
    h = DI_SPEC.spacing[0]
    dist = np.where(exact, 0, np.minimum(np.abs(lo - 200.0), np.abs(hi + 200.0)) + 0 * vx)
    assert np.mean(wrong) < 0.05
    assert np.all(dist[wrong & ~exact.astype(bool)] <= 2 * h)


def test_finite_propagation_speed():
    p = OrbitGameParams()
    phi0 = build_target_field(SPEC, DiscTarget(200.0))
    tau = 10.0
    res = solve(phi0, p, SolveConfig(horizon=tau))
    alpha = dissipation_coefficients(SPEC, p)
    corner = (1500.0, 750.0, 5.0, 5.0)
    dist = math.hypot(1500.0, 750.0) - 200.0
    assert alpha[:2].max() * tau < dist
    m = brt_membership(res, corner)
    assert not m.inside and not m.out_of_domain and m.margin > 0


def test_membership_off_grid(small_tube):
    m = brt_membership(small_tube, (5000.0, 0.0, 0.0, 0.0))
    assert m.out_of_domain and not m.inside


def test_value_and_gradient_off_grid(small_tube):
    _, g, off = small_tube.value_and_gradient((5000.0, 0.0, 0.0, 0.0))
    assert off and np.array_equal(g, np.zeros(4))
    _, gc, _ = small_tube.value_and_gradient((5000.0, 0.0, 0.0, 0.0), clamp=True)
    assert np.any(gc != 0)


def test_solve_is_deterministic(disc0):
    p = OrbitGameParams()
    a = solve(disc0, p, SolveConfig(horizon=20.0))
    b = solve(disc0, p, SolveConfig(horizon=20.0))
    assert field_to_bytes(a.final) == field_to_bytes(b.final)


def test_nan_raises_numerical_failure(disc0, monkeypatch):
    def bad_rate(self, phi):
        out = np.zeros(phi.shape)
        out[1, 2, 3, 4] = np.nan
        return out

    monkeypatch.setattr(solver_mod._Stepper, "rate", bad_rate)
    with pytest.raises(NumericalFailure) as exc:
        solve(disc0, OrbitGameParams(), SolveConfig(horizon=5.0))
    assert exc.value.node == (1, 2, 3, 4)
    assert exc.value.step == 1


def test_convergence_stops_early():
    # a velocity band is invariant under drift-free, input-free motion
    p = OrbitGameParams(omega=0.0, u_max=0.0, d_max=0.0)
    phi0 = build_target_field(DI_SPEC, BoxTarget.from_mapping({"vx": (-1.0, 1.0)}))
    res = solve(phi0, p, SolveConfig(horizon=5000.0, convergence_eps=1e-9))
    assert res.stats["steps"] == 1
    assert res.converged_at == pytest.approx(res.stats["dt"])
    assert res.final == phi0


def test_alpha_override(disc0):
    p = OrbitGameParams()
    alpha = dissipation_coefficients(SPEC, p)
    res = solve(disc0, p, SolveConfig(horizon=5.0), alpha=2 * alpha)
    assert res.stats["alpha"] == pytest.approx((2 * alpha).tolist())
    with pytest.raises(ValueError):
        solve(disc0, p, SolveConfig(horizon=5.0), alpha=0.5 * alpha)
