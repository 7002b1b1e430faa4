"""Planar Hill-Clohessy-Wiltshire relative motion with control and disturbance.

State ordering is ``[x, y, vx, vy]`` with ``x`` tangential and ``y`` radial
(RTN plane). Inputs are accelerations ``[ax, ay]`` in m/s^2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# policy(t, state) -> 2-vector acceleration
Policy = Callable[[float, np.ndarray], np.ndarray]

DEFAULT_OMEGA = 0.0011
DEFAULT_U_MAX = 0.1
DEFAULT_D_MAX = 0.05
DEFAULT_D_FCC = 200.0  # placeholder radius, not a published value

CONVENTIONS = ("avoid", "reach")


@dataclass(frozen=True)
class OrbitGameParams:
    """Parameters of the two-player relative-motion game.

    Attributes
    ----------
    omega : float
        Mean motion of the reference circular orbit (rad/s).
    u_max : float
        Symmetric per-axis bound on Player 1 acceleration (m/s^2).
    d_max : float
        Symmetric per-axis bound on the Player 2 disturbance (m/s^2).
    d_fcc : float
        Radius of the collision disc in the position plane (m).
    game_convention : str
        ``"avoid"`` (control maximizes the value, disturbance minimizes) or
        ``"reach"`` (the opposite ordering).
    """

    omega: float = DEFAULT_OMEGA
    u_max: float = DEFAULT_U_MAX
    d_max: float = DEFAULT_D_MAX
    d_fcc: float = DEFAULT_D_FCC
    game_convention: str = "avoid"

    def __post_init__(self):
        # omega == 0 is accepted: it reduces the model to two double integrators
        if not (math.isfinite(self.omega) and self.omega >= 0):
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        if not (math.isfinite(self.u_max) and self.u_max >= 0):
            raise ValueError(f"u_max must be >= 0, got {self.u_max}")
        if not (math.isfinite(self.d_max) and self.d_max >= 0):
            raise ValueError(f"d_max must be >= 0, got {self.d_max}")
        if not (math.isfinite(self.d_fcc) and self.d_fcc > 0):
            raise ValueError(f"d_fcc must be > 0, got {self.d_fcc}")
        if self.game_convention not in CONVENTIONS:
            raise ValueError(f"game_convention must be one of {CONVENTIONS}")
        if self.game_convention == "avoid" and self.d_max >= self.u_max and self.d_max > 0:
            warnings.warn(
                f"d_max={self.d_max} >= u_max={self.u_max}: the avoiding player "
                "has no authority margin over the disturbance",
                stacklevel=2,
            )

    def with_bounds(self, u_max=None, d_max=None) -> "OrbitGameParams":
        """Copy with replaced input bounds."""
        return OrbitGameParams(
            omega=self.omega,
            u_max=self.u_max if u_max is None else u_max,
            d_max=self.d_max if d_max is None else d_max,
            d_fcc=self.d_fcc,
            game_convention=self.game_convention,
        )


def as_state(state: Sequence[float]) -> np.ndarray:
    s = np.asarray(state, dtype=float)
    if s.shape != (4,):
        raise ValueError(f"state must have 4 components, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError(f"state must be finite, got {s}")
    return s


def hcw_vector_field(state, u, d, params: OrbitGameParams) -> np.ndarray:
    """Time derivative of the relative state under inputs ``u`` and ``d``."""
    x, y, vx, vy = state
    w = params.omega
    return np.array(
        [
            vx,
            vy,
            -2.0 * w * vy + u[0] + d[0],
            2.0 * w * vx + 3.0 * w * w * y + u[1] + d[1],
        ]
    )


def system_matrix(omega: float) -> np.ndarray:
    """Drift matrix ``A`` of ``dX/dt = A X + B (u + d)``."""
    return np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0, -2.0 * omega],
            [0.0, 3.0 * omega**2, 2.0 * omega, 0.0],
        ]
    )


def hcw_transition_matrix(t: float, params: OrbitGameParams) -> np.ndarray:
    """Closed-form state-transition matrix of the unforced planar system.

    ``X(t) = Phi(t) @ X(0)``; valid for negative ``t``.
    """
    n = params.omega
    if n == 0.0:
        return np.array(
            [[1.0, 0.0, t, 0.0], [0.0, 1.0, 0.0, t], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
        )
    nt = n * t
    c, s = math.cos(nt), math.sin(nt)
    # columns: x0, y0, vx0, vy0
    return np.array(
        [
            [1.0, 6.0 * (s - nt), (4.0 * s - 3.0 * nt) / n, -2.0 * (1.0 - c) / n],
            [0.0, 4.0 - 3.0 * c, 2.0 * (1.0 - c) / n, s / n],
            [0.0, -6.0 * n * (1.0 - c), 4.0 * c - 3.0, -2.0 * s],
            [0.0, 3.0 * n * s, 2.0 * s, c],
        ]
    )


def zero_policy(t: float, state: np.ndarray) -> np.ndarray:
    return np.zeros(2)


def rk4_step(state, u, d, dt, params: OrbitGameParams) -> np.ndarray:
    """One classical RK4 step with inputs held constant over the step."""
    k1 = hcw_vector_field(state, u, d, params)
    k2 = hcw_vector_field(state + 0.5 * dt * k1, u, d, params)
    k3 = hcw_vector_field(state + 0.5 * dt * k2, u, d, params)
    k4 = hcw_vector_field(state + dt * k3, u, d, params)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def propagate(
    state,
    u_policy: Policy | None,
    d_policy: Policy | None,
    dt: float,
    steps: int,
    params: OrbitGameParams,
) -> list[np.ndarray]:
    """Fixed-step RK4 propagation under zero-order-hold policies.

    Returns ``steps + 1`` states, the first being ``state`` itself.
    """
    if not (dt > 0):
        raise ValueError(f"dt must be positive, got {dt}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    u_policy = u_policy or zero_policy
    d_policy = d_policy or zero_policy
    x = as_state(state)
    out = [x]
    for k in range(steps):
        t = k * dt
        x = rk4_step(x, u_policy(t, x), d_policy(t, x), dt, params)
        out.append(x)
    return out


def optimal_inputs(costate, params: OrbitGameParams) -> tuple[np.ndarray, np.ndarray]:
    """Bang-bang saddle inputs for a given value gradient.

    Under the avoid convention the control pushes along the velocity part of
    the gradient and the disturbance pushes against it; ``sign(0)`` is +1.
    """
    p = np.asarray(costate, dtype=float)
    sgn = np.where(p[2:4] >= 0.0, 1.0, -1.0)
    if params.game_convention == "avoid":
        return params.u_max * sgn, -params.d_max * sgn
    return -params.u_max * sgn, params.d_max * sgn


def input_gain(params: OrbitGameParams) -> float:
    """Net coefficient of ``|p3| + |p4|`` in the optimized Hamiltonian."""
    if params.game_convention == "avoid":
        return params.u_max - params.d_max
    return params.d_max - params.u_max


def hamiltonian(state, costate, params: OrbitGameParams) -> float:
    x, y, vx, vy = state
    p = np.asarray(costate, dtype=float)
    w = params.omega
    drift = p[0] * vx + p[1] * vy + p[2] * (-2.0 * w * vy) + p[3] * (2.0 * w * vx + 3.0 * w * w * y)
    return float(drift + input_gain(params) * (abs(p[2]) + abs(p[3])))


def hamiltonian_partials_bound(box, params: OrbitGameParams) -> np.ndarray:
    """Upper bounds on ``|dH/dp_i|`` over an axis-aligned state box.

    Parameters
    ----------
    box : sequence of 4 (lo, hi) pairs
        Ranges of ``x, y, vx, vy``.

    Returns
    -------
    ndarray of shape (4,)
        Lax-Friedrichs dissipation coefficients.
    """
    (_, _), (ylo, yhi), (vxlo, vxhi), (vylo, vyhi) = box
    w = params.omega
    amax = lambda lo, hi: max(abs(lo), abs(hi))  # noqa: E731
    inputs = params.u_max + params.d_max
    return np.array(
        [
            amax(vxlo, vxhi),
            amax(vylo, vyhi),
            2.0 * w * amax(vylo, vyhi) + inputs,
            2.0 * w * amax(vxlo, vxhi) + 3.0 * w * w * amax(ylo, yhi) + inputs,
        ]
    )


def orbit_period(params: OrbitGameParams) -> float:
    return math.inf if params.omega == 0 else 2.0 * math.pi / params.omega
