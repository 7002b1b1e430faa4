"""Three-mode hybrid supervisor: nominal station keeping, evasion, return.

The unsafe tube's value function drives the switching. Guards are checked
in the fixed cycle Nominal -> Evasive -> Return -> Nominal with at most one
transition per call.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dynamics import OrbitGameParams, optimal_inputs, rk4_step
from .levelset import RECOVERY_BOX, BoxTarget, cell_increment_scale, target_value


class Mode(enum.Enum):
    NOMINAL = "Nominal"
    EVASIVE = "Evasive"
    RETURN = "Return"


# the only edges the automaton may take
TRANSITIONS = {
    Mode.NOMINAL: Mode.EVASIVE,
    Mode.EVASIVE: Mode.RETURN,
    Mode.RETURN: Mode.NOMINAL,
}


class EscapeMode(enum.IntEnum):
    RAISE_DRIFT_BACK = 1
    LOWER_ACCEL_FORWARD = 2
    TANGENTIAL_BRAKE = 3
    TANGENTIAL_ACCEL = 4


@dataclass(frozen=True)
class PdGains:
    kp_x: float
    kp_y: float
    kd_x: float
    kd_y: float

    def __post_init__(self):
        for name in ("kp_x", "kp_y", "kd_x", "kd_y"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"gain {name} must be >= 0")


# controller gain table: nominal/recovery column and evasive column
NOMINAL_GAINS = PdGains(kp_x=1.0e-4, kp_y=1.0e-4, kd_x=2.0e-2, kd_y=2.0e-2)
EVASIVE_GAINS = PdGains(kp_x=5.0e-4, kp_y=5.0e-4, kd_x=4.4e-2, kd_y=4.4e-2)


@dataclass(frozen=True)
class GuardConfig:
    """Thresholds for the three guards.

    ``guard_band`` stands in for "on the tube boundary": the supervisor leaves
    Nominal once ``phi <= guard_band``. Evasion ends at ``phi >= safe_margin``.
    """

    guard_band: float
    safe_margin: float
    recovery_target: BoxTarget = RECOVERY_BOX
    eps_vx: float = 0.01
    eps_vy: float = 0.01

    def __post_init__(self):
        if not (0 <= self.guard_band < self.safe_margin):
            raise ValueError(
                f"need 0 <= guard_band < safe_margin, got {self.guard_band}, {self.safe_margin}"
            )
        if not (self.eps_vx > 0 and self.eps_vy > 0):
            raise ValueError("velocity tolerances must be > 0")

    @classmethod
    def from_field(cls, field, cells: float = 2.0, **kwargs) -> "GuardConfig":
        """Band of ``cells`` typical cell increments; safe margin twice that."""
        band = cells * cell_increment_scale(field)
        return cls(guard_band=band, safe_margin=2.0 * band, **kwargs)


@dataclass(frozen=True)
class EscapeOffsets:
    radial: float = 200.0
    drift: float = 300.0
    tangential: float = 500.0


@dataclass(frozen=True)
class SupervisorConfig:
    """Everything the supervisor needs besides the value function.

    ``nominal_target=None`` means station keeping at the episode's initial
    position; the recovery box is then re-centred on that slot.
    """

    guards: GuardConfig
    nominal_target: Optional[tuple] = (1000.0, 0.0, 0.0, 0.0)
    nominal_gains: PdGains = NOMINAL_GAINS
    evasive_gains: PdGains = EVASIVE_GAINS
    offsets: EscapeOffsets = field(default_factory=EscapeOffsets)
    lookahead: float = 120.0
    preview_dt: float = 2.0
    # "pd": waypoint PD with the evasive gains; "optimal": bang-bang on grad(phi)
    evasive_policy: str = "pd"
    # below this value the bang-bang avoid law overrides the PD law in
    # Evasive and Return; None disables the override
    override_band: Optional[float] = None

    def __post_init__(self):
        if self.evasive_policy not in ("pd", "optimal"):
            raise ValueError(f"evasive_policy must be 'pd' or 'optimal', got {self.evasive_policy!r}")
        if not self.lookahead > 0 or not self.preview_dt > 0:
            raise ValueError("lookahead and preview_dt must be > 0")

    def for_initial_state(self, initial) -> "SupervisorConfig":
        """Resolve a station-keeping nominal target against ``initial``."""
        if self.nominal_target is not None:
            return self
        slot = (float(initial[0]), float(initial[1]), 0.0, 0.0)
        return replace(self, nominal_target=slot,
                       guards=replace(self.guards, recovery_target=recentre(self.guards.recovery_target, slot)))


def recentre(box: BoxTarget, point) -> BoxTarget:
    """Shift the constrained position intervals of ``box`` to centre on ``point``."""
    bounds = []
    for i, iv in enumerate(box.bounds):
        if iv is None or i >= 2:
            bounds.append(iv)
        else:
            half = 0.5 * (iv[1] - iv[0])
            bounds.append((point[i] - half, point[i] + half))
    return BoxTarget(tuple(bounds))


@dataclass(frozen=True)
class SupervisorState:
    mode: Mode = Mode.NOMINAL
    escape: Optional[EscapeMode] = None
    nominal_target: tuple = (1000.0, 0.0, 0.0, 0.0)
    time_in_mode: float = 0.0
    waypoint: Optional[tuple] = None

    def __post_init__(self):
        if (self.escape is not None) != (self.mode is Mode.EVASIVE):
            raise ValueError("escape mode must be set exactly when Evasive")


def pd_control(state, target, gains: PdGains, u_max: float) -> np.ndarray:
    """Saturated PD law toward ``target = (x_f, y_f, vx_f, vy_f)``."""
    x, y, vx, vy = state
    xf, yf, vxf, vyf = target
    ux = -gains.kp_x * (x - xf) - gains.kd_x * (vx - vxf)
    uy = -gains.kp_y * (y - yf) - gains.kd_y * (vy - vyf)
    return np.clip(np.array([ux, uy]), -u_max, u_max)


def escape_waypoint(mode: EscapeMode, state, offsets: EscapeOffsets = EscapeOffsets()) -> tuple:
    x, y = float(state[0]), float(state[1])
    if mode is EscapeMode.RAISE_DRIFT_BACK:
        return (x - offsets.drift, y + offsets.radial, 0.0, 0.0)
    if mode is EscapeMode.LOWER_ACCEL_FORWARD:
        return (x + offsets.drift, y - offsets.radial, 0.0, 0.0)
    if mode is EscapeMode.TANGENTIAL_BRAKE:
        return (x - offsets.tangential, y, 0.0, 0.0)
    return (x + offsets.tangential, y, 0.0, 0.0)


def preview_min_value(state, waypoint, value, gains: PdGains, params: OrbitGameParams,
                      lookahead: float, dt: float) -> float:
    """Smallest ``phi`` along a disturbance-free PD run toward ``waypoint``."""
    x = np.asarray(state, dtype=float)
    zero = np.zeros(2)
    lowest = value.value(x)[0]
    for _ in range(int(round(lookahead / dt))):
        u = pd_control(x, waypoint, gains, params.u_max)
        x = rk4_step(x, u, zero, dt, params)
        lowest = min(lowest, value.value(x)[0])
    return lowest


def select_escape_mode(state, value, params: OrbitGameParams, config: SupervisorConfig,
                       candidates: Optional[dict] = None) -> EscapeMode:
    """Escape mode whose preview keeps the largest minimum ``phi``.

    Ties go to the lowest-numbered mode.
    """
    if candidates is None:
        candidates = {m: escape_waypoint(m, state, config.offsets) for m in EscapeMode}
    best, best_score = None, -np.inf
    for mode in sorted(candidates):
        score = preview_min_value(state, candidates[mode], value, config.evasive_gains, params,
                                  config.lookahead, config.preview_dt)
        if score > best_score:
            best, best_score = mode, score
    return best


def optimal_avoid_control(state, value, params: OrbitGameParams) -> np.ndarray:
    """Bang-bang avoid input; off the grid the boundary gradient is used."""
    grad, _ = value.gradient(state, clamp=True)
    u, _ = optimal_inputs(grad, params)
    return u


def _enter(mode: Mode, sup: SupervisorState, **kw) -> SupervisorState:
    return replace(sup, mode=mode, time_in_mode=0.0, **kw)


def step_supervisor(sup: SupervisorState, state, value, config: SupervisorConfig,
                    params: OrbitGameParams, dt: float = 0.0,
                    phi: Optional[float] = None) -> tuple[SupervisorState, np.ndarray]:
    """Evaluate the guard of the active mode, then emit that mode's control.

    ``phi`` may be passed when the caller has already sampled the value at
    ``state``. ``time_in_mode`` of the returned state counts the step about to
    be executed.
    """
    guards = config.guards
    if phi is None:
        phi = value.value(state)[0]

    mode = sup.mode
    if mode is Mode.NOMINAL and phi <= guards.guard_band:
        escape = select_escape_mode(state, value, params, config)
        sup = _enter(Mode.EVASIVE, sup, escape=escape,
                     waypoint=escape_waypoint(escape, state, config.offsets))
    elif mode is Mode.EVASIVE and phi >= guards.safe_margin:
        sup = _enter(Mode.RETURN, sup, escape=None, waypoint=None)
    elif (
        mode is Mode.RETURN
        and target_value(guards.recovery_target, state) <= 0
        and abs(state[2]) <= guards.eps_vx
        and abs(state[3]) <= guards.eps_vy
    ):
        sup = _enter(Mode.NOMINAL, sup)

    if sup.mode is Mode.NOMINAL:
        u = pd_control(state, sup.nominal_target, config.nominal_gains, params.u_max)
    elif sup.mode is Mode.EVASIVE:
        if config.evasive_policy == "optimal":
            u = optimal_avoid_control(state, value, params)
        else:
            u = pd_control(state, sup.waypoint, config.evasive_gains, params.u_max)
    else:
        center = tuple(guards.recovery_target.center[:2]) + (0.0, 0.0)
        u = pd_control(state, center, config.nominal_gains, params.u_max)

    if (config.override_band is not None and sup.mode is not Mode.NOMINAL
            and phi <= config.override_band):
        u = optimal_avoid_control(state, value, params)

    return replace(sup, time_in_mode=sup.time_in_mode + dt), u
