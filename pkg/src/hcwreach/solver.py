"""Backward-in-time Lax-Friedrichs solver for the HJI equation on a 4D grid.

The value function is advanced in backward time ``s = -t`` so that
``d(phi)/ds = H(X, grad phi)``. With the avoid convention ``phi`` stays
positive where the controlled vehicle can keep clear of the target and
``{phi <= 0}`` is the set from which the disturbance forces entry.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import OrbitGameParams, hamiltonian_partials_bound, input_gain
from .levelset import AXES, Interpolator, ScalarField, gradient_central, one_sided_differences

log = logging.getLogger(__name__)

MODES = ("tube", "set")


class NumericalFailure(RuntimeError):
    """A solve produced a non-finite value."""

    def __init__(self, message: str, node=None, step=None):
        super().__init__(message)
        self.node = node
        self.step = step


@dataclass(frozen=True)
class SolveConfig:
    horizon: float = 300.0
    cfl: float = 0.5
    save_every: float = 60.0
    convergence_eps: float = 0.0
    mode: str = "tube"

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon >= 0):
            raise ValueError(f"horizon must be >= 0, got {self.horizon}")
        if not (0 < self.cfl <= 1):
            raise ValueError(f"cfl must be in (0, 1], got {self.cfl}")
        if not (self.save_every > 0):
            raise ValueError(f"save_every must be > 0, got {self.save_every}")
        if not (self.convergence_eps >= 0):
            raise ValueError(f"convergence_eps must be >= 0, got {self.convergence_eps}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class ValueFunctionResult:
    """Output of :func:`solve`.

    ``checkpoints`` holds ``(backward_time, field)`` pairs, starting with the
    target field at time 0 and ending with ``final``.
    """

    final: ScalarField
    checkpoints: list = field(default_factory=list)
    converged_at: Optional[float] = None
    stats: dict = field(default_factory=dict)
    params: Optional[OrbitGameParams] = None
    _interp: Optional[Interpolator] = field(default=None, repr=False, compare=False)

    @property
    def spec(self):
        return self.final.spec

    @property
    def horizon(self) -> float:
        return self.stats.get("horizon", 0.0)

    @property
    def interpolator(self) -> Interpolator:
        # value plus its central-difference gradient, built lazily
        if self._interp is None:
            self._interp = Interpolator(self.final, extra=gradient_central(self.final))
        return self._interp

    def value(self, state) -> tuple[float, bool]:
        """Interpolated ``phi`` at ``state`` with an out-of-domain flag."""
        return self.interpolator(state)

    def value_and_gradient(self, state, clamp: bool = False) -> tuple[float, np.ndarray, bool]:
        """``phi``, its interpolated gradient and the off-grid flag.

        Off the grid the gradient is zero unless ``clamp`` is set, in which
        case the gradient at the nearest boundary point is returned.
        """
        val, grad, off = self.interpolator.with_extra(state)
        if off and not clamp:
            grad = np.zeros(4)
        return val, grad, off

    def gradient(self, state, clamp: bool = False) -> tuple[np.ndarray, bool]:
        _, grad, off = self.value_and_gradient(state, clamp)
        return grad, off

    def checkpoint_at(self, t: float) -> ScalarField:
        """Latest checkpoint with backward time ``<= t``."""
        best = self.checkpoints[0][1]
        for tc, f in self.checkpoints:
            if tc <= t + 1e-9:
                best = f
        return best

    def stats_record(self) -> dict:
        return dict(self.stats)


def dissipation_coefficients(spec, params: OrbitGameParams) -> np.ndarray:
    return hamiltonian_partials_bound(spec.box(), params)


def stable_dt(spec, alpha, cfl: float) -> float:
    rate = float(np.sum(np.asarray(alpha) / spec.spacing))
    return math.inf if rate == 0.0 else cfl / rate


class _Stepper:
    """Evaluates the Lax-Friedrichs increment ``H_hat`` for one field."""

    def __init__(self, spec, params: OrbitGameParams, alpha):
        x, y, vx, vy = spec.mesh()
        w = params.omega
        self.h = spec.spacing
        # dH/dp for the drift part, broadcastable to the grid shape
        self.f = (vx, vy, -2.0 * w * vy, 2.0 * w * vx + 3.0 * w * w * y)
        self.gain = input_gain(params)
        self.alpha = np.asarray(alpha, dtype=float)

    def rate(self, phi: np.ndarray) -> np.ndarray:
        out = np.zeros(phi.shape)
        for i in range(4):
            dm, dp = one_sided_differences(phi, i, self.h[i])
            mean = 0.5 * (dm + dp)
            out += self.f[i] * mean
            if i >= 2 and self.gain != 0.0:
                out += self.gain * np.abs(mean)
            if self.alpha[i] != 0.0:
                out += (0.5 * self.alpha[i]) * (dp - dm)
        return out


def _first_bad_node(arr: np.ndarray, spec) -> tuple:
    idx = np.unravel_index(int(np.argmax(~np.isfinite(arr))), arr.shape)
    return tuple(int(i) for i in idx), spec.node(idx)


def solve(phi0: ScalarField, params: OrbitGameParams, config: SolveConfig, alpha=None) -> ValueFunctionResult:
    """Integrate the value function backward over ``[0, horizon]``.

    In ``tube`` mode every step takes the pointwise minimum with the previous
    iterate, which also keeps the result below ``phi0``. ``set`` mode
    advances the plain HJI equation.

    ``alpha`` overrides the dissipation coefficients. Solves that are to be
    compared pointwise should share one ``alpha`` (and hence one time step)
    that bounds every game in the comparison.
    """
    spec = phi0.spec
    own = dissipation_coefficients(spec, params)
    if alpha is None:
        alpha = own
    else:
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (4,) or np.any(alpha < own - 1e-12):
            raise ValueError(f"alpha must bound |dH/dp| = {own.tolist()}, got {alpha.tolist()}")
    dt_max = stable_dt(spec, alpha, config.cfl)
    stats = {
        "horizon": float(config.horizon),
        "mode": config.mode,
        "cfl": config.cfl,
        "alpha": [float(a) for a in alpha],
        "dt": None if math.isinf(dt_max) else dt_max,
        "steps": 0,
        "converged_at": None,
        "max_updates": [],
        "game_convention": params.game_convention,
        "omega": params.omega,
        "u_max": params.u_max,
        "d_max": params.d_max,
    }
    checkpoints = [(0.0, phi0)]
    if config.horizon == 0:
        return ValueFunctionResult(final=phi0, checkpoints=checkpoints, stats=stats, params=params)

    if math.isinf(dt_max):
        # no dynamics at all: the field is stationary
        stats["steps"] = 0
        checkpoints.append((float(config.horizon), phi0))
        return ValueFunctionResult(final=phi0, checkpoints=checkpoints, stats=stats, params=params)

    stepper = _Stepper(spec, params, alpha)
    phi = np.array(phi0.values)
    t = 0.0
    next_save = config.save_every
    step = 0
    converged_at = None
    while t < config.horizon - 1e-12 * config.horizon:
        # shortened steps land exactly on save times and on the horizon
        dt = min(dt_max, config.horizon - t, next_save - t)
        new = phi + dt * stepper.rate(phi)
        if not np.all(np.isfinite(new)):
            idx, coords = _first_bad_node(new, spec)
            raise NumericalFailure(
                f"non-finite value at step {step + 1} (t={t + dt:.6g}s), node {idx} = "
                + ", ".join(f"{a}={c:.6g}" for a, c in zip(AXES, coords)),
                node=idx,
                step=step + 1,
            )
        if config.mode == "tube":
            np.minimum(new, phi, out=new)
        update = float(np.max(np.abs(new - phi)))
        phi = new
        t += dt
        step += 1
        stats["max_updates"].append(update)
        if t >= next_save - 1e-9:
            if t < config.horizon - 1e-9:
                checkpoints.append((t, ScalarField(spec, phi)))
            while next_save <= t + 1e-9:
                next_save += config.save_every
        if config.convergence_eps > 0 and update < config.convergence_eps:
            converged_at = t
            log.info("converged at t=%.3f s (max update %.3e)", t, update)
            break

    final = ScalarField(spec, phi)
    checkpoints.append((t, final))
    stats["steps"] = step
    stats["converged_at"] = converged_at
    stats["final_time"] = t
    return ValueFunctionResult(
        final=final, checkpoints=checkpoints, converged_at=converged_at, stats=stats, params=params
    )


@dataclass(frozen=True)
class Membership:
    inside: bool
    margin: float
    out_of_domain: bool = False


def brt_membership(result: ValueFunctionResult, state) -> Membership:
    margin, off = result.value(state)
    if off:
        return Membership(False, margin, True)
    return Membership(margin <= 0.0, margin, False)


def disturbance_sensitivity(phi0, params: OrbitGameParams, config: SolveConfig, d_levels) -> list:
    """One solve per disturbance bound, everything else fixed.

    All solves share the dissipation of the largest bound so that the fields
    are comparable node by node.
    """
    levels = list(d_levels)
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ValueError("d_levels must be sorted ascending")
    alpha = dissipation_coefficients(phi0.spec, params.with_bounds(d_max=levels[-1]))
    return [solve(phi0, params.with_bounds(d_max=d), config, alpha=alpha) for d in levels]
