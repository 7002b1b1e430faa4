"""Closed-loop episodes and Monte Carlo batches against a bounded adversary."""

from __future__ import annotations

import enum
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import OrbitGameParams, as_state, optimal_inputs, rk4_step
from .levelset import DiscTarget, target_value
from .supervisor import Mode, SupervisorConfig, SupervisorState, optimal_avoid_control, step_supervisor

CSV_HEADER = "t,x,y,vx,vy,mode,ux,uy,dx,dy,phi"


class Outcome(enum.Enum):
    # horizon reached collision-free and the final state is outside the tube
    SAFE = "Safe"
    COLLISION = "CollisionZoneEntered"
    # horizon reached collision-free but the final state is still in the tube
    HORIZON = "HorizonReached"


# --- disturbance policies ----------------------------------------------------


@dataclass(frozen=True)
class DisturbancePolicy:
    """Player 2 behaviour.

    ``kind`` is one of ``zero``, ``constant``, ``uniform_random`` or
    ``worst_case``. Constant values are clipped to the disturbance box.
    """

    kind: str = "zero"
    value: tuple = (0.0, 0.0)
    seed: Optional[int] = None

    KINDS = ("zero", "constant", "uniform_random", "worst_case")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}; expected one of {self.KINDS}")

    def bind(self, value, params: OrbitGameParams, rng: Optional[np.random.Generator] = None):
        """Return a ``(t, state) -> d`` callable for one episode."""
        d_max = params.d_max
        if self.kind == "zero" or d_max == 0:
            return lambda t, s: np.zeros(2)
        if self.kind == "constant":
            c = np.clip(np.asarray(self.value, dtype=float), -d_max, d_max)
            return lambda t, s: c.copy()
        if self.kind == "uniform_random":
            if rng is None:
                rng = np.random.default_rng(self.seed)
            return lambda t, s: rng.uniform(-d_max, d_max, size=2)
        return lambda t, s: worst_case_disturbance(s, value, params)


def worst_case_disturbance(state, value, params: OrbitGameParams) -> np.ndarray:
    """Adversary input ``-d_max * sign(grad phi)`` on the velocity channels.

    Zero off the grid.
    """
    if params.d_max == 0:
        return np.zeros(2)
    grad, off = value.gradient(state)
    if off:
        return np.zeros(2)
    _, d = optimal_inputs(grad, params)
    return d


# --- episodes -----------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    states: np.ndarray
    modes: list
    u: np.ndarray
    d: np.ndarray
    phi: np.ndarray
    outcome: Outcome

    def __len__(self):
        return len(self.t)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def mode_sequence(self) -> list:
        """Modes with consecutive repeats collapsed."""
        seq = []
        for m in self.modes:
            if not seq or seq[-1] != m:
                seq.append(m)
        return seq

    def dwell_steps(self) -> list:
        """Lengths of the runs of identical consecutive modes."""
        runs = []
        for m in self.modes:
            if runs and runs[-1][0] == m:
                runs[-1][1] += 1
            else:
                runs.append([m, 1])
        return [n for _, n in runs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for k in range(len(self.t)):
            m = self.modes[k]
            name = m.value if isinstance(m, Mode) else str(m)
            nums = [self.t[k], *self.states[k]]
            tail = [*self.u[k], *self.d[k], self.phi[k]]
            buf.write(",".join(f"{v:.17g}" for v in nums))
            buf.write(f",{name},")
            buf.write(",".join(f"{v:.17g}" for v in tail))
            buf.write("\n")
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "steps": len(self.t) - 1,
            "final_time": float(self.t[-1]),
            "final_state": [float(v) for v in self.final_state],
            "final_phi": float(self.phi[-1]),
            "min_separation": float(np.min(np.hypot(self.states[:, 0], self.states[:, 1]))),
            "mode_sequence": [m.value if isinstance(m, Mode) else str(m) for m in self.mode_sequence()],
        }


def run_episode(
    initial,
    value,
    supervisor: Optional[SupervisorConfig],
    d_policy: DisturbancePolicy,
    dt: float,
    duration: float,
    params: OrbitGameParams,
    rng: Optional[np.random.Generator] = None,
    player1: str = "supervisor",
) -> TrajectoryRecord:
    """Simulate one closed-loop run.

    ``player1`` selects the controlled vehicle's law: ``"supervisor"`` (the
    hybrid automaton) or ``"optimal"`` (bang-bang on the value gradient, no
    mode logic). Inputs are held over each ``dt``; the run stops at the first
    logged state inside the collision disc.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if not duration >= dt:
        raise ValueError(f"duration must be >= dt, got {duration}")
    if player1 not in ("supervisor", "optimal"):
        raise ValueError(f"unknown player1 law {player1!r}")
    if player1 == "supervisor" and supervisor is None:
        raise ValueError("supervisor config required")

    disc = DiscTarget(params.d_fcc)
    disturb = d_policy.bind(value, params, rng)
    steps = int(round(duration / dt))
    x = as_state(initial)
    sup = None
    if player1 == "supervisor":
        supervisor = supervisor.for_initial_state(x)
        sup = SupervisorState(nominal_target=tuple(supervisor.nominal_target))

    ts, xs, modes, us, ds, phis = [], [], [], [], [], []
    outcome = None
    for k in range(steps + 1):
        t = k * dt
        phi = value.value(x)[0]
        if sup is not None:
            sup, u = step_supervisor(sup, x, value, supervisor, params, dt, phi=phi)
            mode = sup.mode
        else:
            u = optimal_avoid_control(x, value, params)
            mode = "optimal"
        d = disturb(t, x)
        ts.append(t)
        xs.append(x)
        modes.append(mode)
        us.append(u)
        ds.append(d)
        phis.append(phi)
        if target_value(disc, x) <= 0:
            outcome = Outcome.COLLISION
            break
        if k == steps:
            break
        x = rk4_step(x, u, d, dt, params)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"state became non-finite at t={t + dt}")

    if outcome is None:
        outcome = Outcome.SAFE if phis[-1] > 0 else Outcome.HORIZON
    return TrajectoryRecord(
        t=np.array(ts),
        states=np.array(xs),
        modes=modes,
        u=np.array(us),
        d=np.array(ds),
        phi=np.array(phis),
        outcome=outcome,
    )


# --- Monte Carlo -----------------------------------------------------------------


@dataclass(frozen=True)
class InitialStateSampler:
    """Box-uniform initial states, rejected until the value constraint holds.

    ``phi_above``/``phi_below`` are strict bounds on the interpolated value;
    ``outside_disc`` additionally rejects states already inside the
    collision disc.
    """

    box: tuple
    phi_above: Optional[float] = None
    phi_below: Optional[float] = None
    outside_disc: bool = False
    max_tries: int = 100000

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if len(box) != 4 or any(not lo <= hi for lo, hi in box):
            raise ValueError("sampler box needs 4 ordered (lo, hi) pairs")
        object.__setattr__(self, "box", box)

    def draw(self, rng: np.random.Generator, value, params: OrbitGameParams) -> np.ndarray:
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        for _ in range(self.max_tries):
            s = lo + (hi - lo) * rng.random(4)
            if self.outside_disc and math.hypot(s[0], s[1]) <= params.d_fcc:
                continue
            if self.phi_above is None and self.phi_below is None:
                return s
            phi = value.value(s)[0]
            if self.phi_above is not None and not phi > self.phi_above:
                continue
            if self.phi_below is not None and not phi < self.phi_below:
                continue
            return s
        raise RuntimeError(f"sampler rejected {self.max_tries} draws in a row")

    def to_dict(self) -> dict:
        return {
            "box": [list(b) for b in self.box],
            "phi_above": self.phi_above,
            "phi_below": self.phi_below,
            "outside_disc": self.outside_disc,
        }


def derive_seeds(seed: int, n: int) -> list[int]:
    """Per-episode seeds, stable for a given ``(seed, n)`` prefix."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


@dataclass
class MonteCarloReport:
    runs: int
    violations: int
    outcomes: list
    sampler: dict
    seed: int
    episode_seeds: list = field(default_factory=list)
    initial_states: list = field(default_factory=list)
    min_separations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "violations": self.violations,
            "seed": self.seed,
            "sampler": self.sampler,
            "episodes": [
                {
                    "index": i,
                    "seed": self.episode_seeds[i],
                    "outcome": self.outcomes[i],
                    "initial_state": self.initial_states[i],
                    "min_separation": self.min_separations[i],
                }
                for i in range(self.runs)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MonteCarloReport":
        eps = sorted(d["episodes"], key=lambda e: e["index"])
        return cls(
            runs=d["runs"],
            violations=d["violations"],
            outcomes=[e["outcome"] for e in eps],
            sampler=d["sampler"],
            seed=d["seed"],
            episode_seeds=[e["seed"] for e in eps],
            initial_states=[e["initial_state"] for e in eps],
            min_separations=[e["min_separation"] for e in eps],
        )


def run_seeded_episode(episode_seed: int, sampler: InitialStateSampler, value, supervisor,
                       d_policy: DisturbancePolicy, dt: float, duration: float,
                       params: OrbitGameParams, player1: str = "supervisor"):
    """Draw the initial state and run one episode from a single seed."""
    rng = np.random.default_rng(episode_seed)
    initial = sampler.draw(rng, value, params)
    rec = run_episode(initial, value, supervisor, d_policy, dt, duration, params, rng=rng,
                      player1=player1)
    return initial, rec


# worker-process globals, set once per worker by the pool initializer
_WORKER: dict = {}


def _init_worker(args):
    _WORKER["args"] = args


def _worker_run(job):
    index, ep_seed = job
    sampler, value, supervisor, d_policy, dt, duration, params, player1 = _WORKER["args"]
    initial, rec = run_seeded_episode(ep_seed, sampler, value, supervisor, d_policy, dt,
                                      duration, params, player1)
    sep = float(np.min(np.hypot(rec.states[:, 0], rec.states[:, 1])))
    return index, [float(v) for v in initial], rec.outcome.value, sep


def run_monte_carlo(
    sampler: InitialStateSampler,
    n: int,
    seed: int,
    value,
    supervisor: Optional[SupervisorConfig],
    d_policy: DisturbancePolicy,
    dt: float,
    duration: float,
    params: OrbitGameParams,
    player1: str = "supervisor",
    workers: int = 1,
) -> MonteCarloReport:
    """Run ``n`` independent episodes; the report depends only on ``seed``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    seeds = derive_seeds(seed, n)
    args = (sampler, value, supervisor, d_policy, dt, duration, params, player1)
    jobs = list(enumerate(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(args,)) as pool:
            results = list(pool.map(_worker_run, jobs, chunksize=max(1, n // (4 * workers))))
    else:
        _init_worker(args)
        results = [_worker_run(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    outcomes = [r[2] for r in results]
    return MonteCarloReport(
        runs=n,
        violations=sum(o == Outcome.COLLISION.value for o in outcomes),
        outcomes=outcomes,
        sampler=sampler.to_dict(),
        seed=seed,
        episode_seeds=seeds,
        initial_states=[r[1] for r in results],
        min_separations=[r[3] for r in results],
    )
