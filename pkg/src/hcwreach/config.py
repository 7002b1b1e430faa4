"""Run configuration: one YAML file fully determines a solve or simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import yaml

from .dynamics import CONVENTIONS, OrbitGameParams
from .levelset import AXES, RECOVERY_BOX, BoxTarget, DiscTarget, GridSpec
from .sim import DisturbancePolicy, InitialStateSampler
from .solver import SolveConfig
from .supervisor import (
    EVASIVE_GAINS,
    NOMINAL_GAINS,
    EscapeOffsets,
    GuardConfig,
    PdGains,
    SupervisorConfig,
)


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


Threshold = Union[float, str]  # a number, "auto", "safe_margin" or "<k> cells"


@dataclass
class GuardSettings:
    guard_band: Threshold = "auto"
    safe_margin: Threshold = "auto"
    band_cells: float = 2.0
    recovery_target: BoxTarget = RECOVERY_BOX
    eps_vx: float = 0.01
    eps_vy: float = 0.01


@dataclass
class SupervisorSettings:
    nominal_target: Optional[tuple] = (1000.0, 0.0, 0.0, 0.0)  # None: hold initial slot
    evasive_policy: str = "pd"
    override_band: Optional[Threshold] = "auto"
    lookahead: float = 120.0
    preview_dt: float = 2.0


@dataclass
class SamplerSettings:
    box: Optional[tuple] = None  # None: the grid box
    phi_above: Optional[Threshold] = "safe_margin"
    phi_below: Optional[Threshold] = None
    outside_disc: bool = False


@dataclass
class SimSettings:
    dt: float = 1.0
    duration: Optional[float] = None  # None: twice the solve horizon
    initial: tuple = (1000.0, 0.0, 0.0, 0.0)
    disturbance: DisturbancePolicy = field(default_factory=DisturbancePolicy)
    player1: str = "supervisor"
    seed: int = 0
    runs: int = 100
    workers: int = 1
    sampler: SamplerSettings = field(default_factory=SamplerSettings)


@dataclass
class RunConfig:
    name: str = "run"
    params: OrbitGameParams = field(default_factory=OrbitGameParams)
    grid: GridSpec = field(default_factory=GridSpec.default)
    target: Union[DiscTarget, BoxTarget, None] = None  # None: disc of radius d_fcc
    solve: SolveConfig = field(default_factory=SolveConfig)
    guards: GuardSettings = field(default_factory=GuardSettings)
    nominal_gains: PdGains = NOMINAL_GAINS
    evasive_gains: PdGains = EVASIVE_GAINS
    offsets: EscapeOffsets = field(default_factory=EscapeOffsets)
    supervisor: SupervisorSettings = field(default_factory=SupervisorSettings)
    sim: SimSettings = field(default_factory=SimSettings)
    output_dir: str = "out"

    @property
    def target_set(self):
        return self.target if self.target is not None else DiscTarget(self.params.d_fcc)

    @property
    def duration(self) -> float:
        return self.sim.duration if self.sim.duration is not None else 2.0 * self.solve.horizon

    def resolve_threshold(self, spec: Threshold, cell_scale: float, safe_margin: float = None) -> float:
        if isinstance(spec, (int, float)):
            return float(spec)
        if spec == "safe_margin":
            return safe_margin
        if spec.endswith("cells"):
            return float(spec[: -len("cells")]) * cell_scale
        raise ConfigError(f"unresolvable threshold {spec!r}")

    def guard_config(self, field_, cell_scale: Optional[float] = None) -> GuardConfig:
        from .levelset import cell_increment_scale

        g = self.guards
        if cell_scale is None:
            cell_scale = cell_increment_scale(field_)
        band = g.band_cells * cell_scale if g.guard_band == "auto" else self.resolve_threshold(g.guard_band, cell_scale)
        margin = 2.0 * band if g.safe_margin == "auto" else self.resolve_threshold(g.safe_margin, cell_scale)
        try:
            return GuardConfig(band, margin, g.recovery_target, g.eps_vx, g.eps_vy)
        except ValueError as exc:
            raise ConfigError(f"guards: {exc}") from None

    def supervisor_config(self, field_, cell_scale: Optional[float] = None) -> SupervisorConfig:
        from .levelset import cell_increment_scale

        if cell_scale is None:
            cell_scale = cell_increment_scale(field_)
        guards = self.guard_config(field_, cell_scale)
        s = self.supervisor
        if s.override_band is None:
            override = None
        elif s.override_band == "auto":
            override = 0.5 * guards.guard_band
        else:
            override = self.resolve_threshold(s.override_band, cell_scale, guards.safe_margin)
        return SupervisorConfig(
            guards=guards,
            nominal_target=s.nominal_target,
            nominal_gains=self.nominal_gains,
            evasive_gains=self.evasive_gains,
            offsets=self.offsets,
            lookahead=s.lookahead,
            preview_dt=s.preview_dt,
            evasive_policy=s.evasive_policy,
            override_band=override,
        )

    def sampler(self, field_, cell_scale: Optional[float] = None) -> InitialStateSampler:
        from .levelset import cell_increment_scale

        if cell_scale is None:
            cell_scale = cell_increment_scale(field_)
        guards = self.guard_config(field_, cell_scale)
        s = self.sim.sampler
        res = lambda v: None if v is None else self.resolve_threshold(v, cell_scale, guards.safe_margin)  # noqa: E731
        return InitialStateSampler(
            box=tuple(s.box) if s.box is not None else tuple(self.grid.box()),
            phi_above=res(s.phi_above),
            phi_below=res(s.phi_below),
            outside_disc=s.outside_disc,
        )


# --- parsing -----------------------------------------------------------------------


def _err(path: str, msg: str) -> ConfigError:
    return ConfigError(f"{path}: {msg}")


def _section(d: dict, key: str, path: str) -> dict:
    v = d.get(key, {})
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise _err(f"{path}{key}", "expected a mapping")
    return v


def _check_keys(d: dict, allowed, path: str):
    for k in d:
        if k not in allowed:
            raise _err(f"{path}{k}", "unknown key")


def _num(d: dict, key: str, path: str, default, *, cond=None, what="") -> float:
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _err(f"{path}{key}", f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise _err(f"{path}{key}", "must be finite")
    if cond is not None and not cond(v):
        raise _err(f"{path}{key}", f"must be {what}, got {v}")
    return v


def _vec(v, n: int, path: str) -> tuple:
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise _err(path, f"expected a list of {n} numbers, got {v!r}")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise _err(f"{path}[{i}]", f"expected a finite number, got {x!r}")
        out.append(float(x))
    return tuple(out)


def _threshold(v, path: str, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    if isinstance(v, str):
        if v in ("auto", "safe_margin"):
            return v
        if v.endswith("cells"):
            try:
                float(v[: -len("cells")])
                return v.strip()
            except ValueError:
                pass
    raise _err(path, f"expected a number, 'auto', 'safe_margin' or '<k> cells', got {v!r}")


def _box(d: dict, path: str) -> BoxTarget:
    if not isinstance(d, dict):
        raise _err(path, "expected a mapping of axis -> [lo, hi]")
    _check_keys(d, AXES, path + ".")
    bounds = {k: _vec(v, 2, f"{path}.{k}") for k, v in d.items()}
    try:
        return BoxTarget.from_mapping(bounds)
    except ValueError as exc:
        raise _err(path, str(exc)) from None


def _target(d, path: str):
    if d is None:
        return None
    if not isinstance(d, dict) or "type" not in d:
        raise _err(path, "expected a mapping with a 'type' key")
    kind = d["type"]
    if kind == "disc":
        _check_keys(d, ("type", "radius"), path + ".")
        if "radius" not in d:
            return None
        return DiscTarget(_num(d, "radius", path + ".", None, cond=lambda v: v > 0, what="> 0"))
    if kind == "box":
        _check_keys(d, ("type", "bounds"), path + ".")
        return _box(d.get("bounds"), f"{path}.bounds")
    raise _err(f"{path}.type", f"expected 'disc' or 'box', got {kind!r}")


def _gains(d: dict, path: str, default: PdGains) -> PdGains:
    _check_keys(d, ("kp_x", "kp_y", "kd_x", "kd_y"), path)
    vals = {
        k: _num(d, k, path, getattr(default, k), cond=lambda v: v >= 0, what=">= 0")
        for k in ("kp_x", "kp_y", "kd_x", "kd_y")
    }
    return PdGains(**vals)


def config_from_dict(raw: dict) -> RunConfig:
    """Validate and build a :class:`RunConfig`; raises :class:`ConfigError`."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a mapping")
    _check_keys(
        raw,
        ("name", "orbit", "grid", "target", "solve", "guards", "gains", "escape", "supervisor", "sim", "output_dir"),
        "",
    )
    cfg = RunConfig()
    cfg.name = str(raw.get("name", cfg.name))
    cfg.output_dir = str(raw.get("output_dir", cfg.output_dir))

    o = _section(raw, "orbit", "")
    _check_keys(o, ("omega", "u_max", "d_max", "d_fcc", "game_convention"), "orbit.")
    conv = o.get("game_convention", "avoid")
    if conv not in CONVENTIONS:
        raise _err("orbit.game_convention", f"expected one of {CONVENTIONS}, got {conv!r}")
    cfg.params = OrbitGameParams(
        omega=_num(o, "omega", "orbit.", 0.0011, cond=lambda v: v >= 0, what=">= 0"),
        u_max=_num(o, "u_max", "orbit.", 0.1, cond=lambda v: v >= 0, what=">= 0"),
        d_max=_num(o, "d_max", "orbit.", 0.05, cond=lambda v: v >= 0, what=">= 0"),
        d_fcc=_num(o, "d_fcc", "orbit.", 200.0, cond=lambda v: v > 0, what="> 0"),
        game_convention=conv,
    )

    g = _section(raw, "grid", "")
    _check_keys(g, ("min", "max", "count"), "grid.")
    dflt = GridSpec.default()
    mins = _vec(g.get("min", list(dflt.mins)), 4, "grid.min")
    maxs = _vec(g.get("max", list(dflt.maxs)), 4, "grid.max")
    counts = g.get("count", list(dflt.counts))
    if not isinstance(counts, list) or len(counts) != 4 or not all(isinstance(c, int) and not isinstance(c, bool) for c in counts):
        raise _err("grid.count", f"expected a list of 4 integers, got {counts!r}")
    try:
        cfg.grid = GridSpec(mins, maxs, tuple(counts))
    except ValueError as exc:
        raise _err("grid", str(exc)) from None

    cfg.target = _target(raw.get("target"), "target")

    s = _section(raw, "solve", "")
    _check_keys(s, ("horizon", "cfl", "save_every", "convergence_eps", "mode"), "solve.")
    mode = s.get("mode", "tube")
    if mode not in ("tube", "set"):
        raise _err("solve.mode", f"expected 'tube' or 'set', got {mode!r}")
    cfg.solve = SolveConfig(
        horizon=_num(s, "horizon", "solve.", 300.0, cond=lambda v: v >= 0, what=">= 0"),
        cfl=_num(s, "cfl", "solve.", 0.5, cond=lambda v: 0 < v <= 1, what="in (0, 1]"),
        save_every=_num(s, "save_every", "solve.", 60.0, cond=lambda v: v > 0, what="> 0"),
        convergence_eps=_num(s, "convergence_eps", "solve.", 0.0, cond=lambda v: v >= 0, what=">= 0"),
        mode=mode,
    )

    gd = _section(raw, "guards", "")
    _check_keys(gd, ("guard_band", "safe_margin", "band_cells", "recovery_target", "eps_vx", "eps_vy"), "guards.")
    gs = GuardSettings(
        guard_band=_threshold(gd.get("guard_band", "auto"), "guards.guard_band"),
        safe_margin=_threshold(gd.get("safe_margin", "auto"), "guards.safe_margin"),
        band_cells=_num(gd, "band_cells", "guards.", 2.0, cond=lambda v: v > 0, what="> 0"),
        recovery_target=_box(gd["recovery_target"], "guards.recovery_target") if "recovery_target" in gd else RECOVERY_BOX,
        eps_vx=_num(gd, "eps_vx", "guards.", 0.01, cond=lambda v: v > 0, what="> 0"),
        eps_vy=_num(gd, "eps_vy", "guards.", 0.01, cond=lambda v: v > 0, what="> 0"),
    )
    if isinstance(gs.guard_band, float) and isinstance(gs.safe_margin, float):
        if not 0 <= gs.guard_band < gs.safe_margin:
            raise _err("guards.safe_margin", "need 0 <= guard_band < safe_margin")
    cfg.guards = gs

    gn = _section(raw, "gains", "")
    _check_keys(gn, ("nominal", "evasive"), "gains.")
    cfg.nominal_gains = _gains(_section(gn, "nominal", "gains."), "gains.nominal.", NOMINAL_GAINS)
    cfg.evasive_gains = _gains(_section(gn, "evasive", "gains."), "gains.evasive.", EVASIVE_GAINS)

    e = _section(raw, "escape", "")
    _check_keys(e, ("radial", "drift", "tangential"), "escape.")
    cfg.offsets = EscapeOffsets(
        radial=_num(e, "radial", "escape.", 200.0, cond=lambda v: v >= 0, what=">= 0"),
        drift=_num(e, "drift", "escape.", 300.0, cond=lambda v: v >= 0, what=">= 0"),
        tangential=_num(e, "tangential", "escape.", 500.0, cond=lambda v: v >= 0, what=">= 0"),
    )

    sv = _section(raw, "supervisor", "")
    _check_keys(sv, ("nominal_target", "evasive_policy", "override_band", "lookahead", "preview_dt"), "supervisor.")
    nt = sv.get("nominal_target", [1000.0, 0.0, 0.0, 0.0])
    if nt == "hold":
        nt = None
    else:
        nt = _vec(nt, 4, "supervisor.nominal_target")
    pol = sv.get("evasive_policy", "pd")
    if pol not in ("pd", "optimal"):
        raise _err("supervisor.evasive_policy", f"expected 'pd' or 'optimal', got {pol!r}")
    cfg.supervisor = SupervisorSettings(
        nominal_target=nt,
        evasive_policy=pol,
        override_band=_threshold(sv.get("override_band", "auto"), "supervisor.override_band", allow_none=True),
        lookahead=_num(sv, "lookahead", "supervisor.", 120.0, cond=lambda v: v > 0, what="> 0"),
        preview_dt=_num(sv, "preview_dt", "supervisor.", 2.0, cond=lambda v: v > 0, what="> 0"),
    )

    sm = _section(raw, "sim", "")
    _check_keys(sm, ("dt", "duration", "initial", "disturbance", "player1", "seed", "runs", "workers", "sampler"), "sim.")
    dist = _section(sm, "disturbance", "sim.")
    _check_keys(dist, ("type", "value"), "sim.disturbance.")
    kind = dist.get("type", "zero")
    if kind not in DisturbancePolicy.KINDS:
        raise _err("sim.disturbance.type", f"expected one of {DisturbancePolicy.KINDS}, got {kind!r}")
    dval = _vec(dist.get("value", [0.0, 0.0]), 2, "sim.disturbance.value")
    p1 = sm.get("player1", "supervisor")
    if p1 not in ("supervisor", "optimal"):
        raise _err("sim.player1", f"expected 'supervisor' or 'optimal', got {p1!r}")
    dt = _num(sm, "dt", "sim.", 1.0, cond=lambda v: v > 0, what="> 0")
    duration = sm.get("duration")
    if duration is not None:
        duration = _num(sm, "duration", "sim.", None, cond=lambda v: v >= dt, what=">= sim.dt")
    for key in ("seed", "runs", "workers"):
        v = sm.get(key)
        if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < (0 if key == "seed" else 1)):
            raise _err(f"sim.{key}", f"expected a {'non-negative' if key == 'seed' else 'positive'} integer, got {v!r}")
    sp = _section(sm, "sampler", "sim.")
    _check_keys(sp, ("box", "phi_above", "phi_below", "outside_disc"), "sim.sampler.")
    sbox = None
    if sp.get("box") is not None:
        b = sp["box"]
        if not isinstance(b, list) or len(b) != 4:
            raise _err("sim.sampler.box", "expected 4 [lo, hi] pairs")
        sbox = tuple(_vec(iv, 2, f"sim.sampler.box[{i}]") for i, iv in enumerate(b))
        for i, (lo, hi) in enumerate(sbox):
            if lo > hi:
                raise _err(f"sim.sampler.box[{i}]", "lo must be <= hi")
    cfg.sim = SimSettings(
        dt=dt,
        duration=duration,
        initial=_vec(sm.get("initial", [1000.0, 0.0, 0.0, 0.0]), 4, "sim.initial"),
        disturbance=DisturbancePolicy(kind=kind, value=dval),
        player1=p1,
        seed=sm.get("seed", 0),
        runs=sm.get("runs", 100),
        workers=sm.get("workers", 1),
        sampler=SamplerSettings(
            box=sbox,
            phi_above=_threshold(sp.get("phi_above", "safe_margin"), "sim.sampler.phi_above", allow_none=True),
            phi_below=_threshold(sp.get("phi_below"), "sim.sampler.phi_below", allow_none=True),
            outside_disc=bool(sp.get("outside_disc", False)),
        ),
    )
    return cfg


def _box_dict(box: BoxTarget) -> dict:
    return {a: list(iv) for a, iv in zip(AXES, box.bounds) if iv is not None}


def config_to_dict(cfg: RunConfig) -> dict:
    p = cfg.params
    if cfg.target is None:
        target = {"type": "disc"}
    elif isinstance(cfg.target, DiscTarget):
        target = {"type": "disc", "radius": cfg.target.radius}
    else:
        target = {"type": "box", "bounds": _box_dict(cfg.target)}
    g = cfg.guards
    s = cfg.sim
    gains = lambda pg: {"kp_x": pg.kp_x, "kp_y": pg.kp_y, "kd_x": pg.kd_x, "kd_y": pg.kd_y}  # noqa: E731
    return {
        "name": cfg.name,
        "orbit": {"omega": p.omega, "u_max": p.u_max, "d_max": p.d_max, "d_fcc": p.d_fcc,
                  "game_convention": p.game_convention},
        "grid": {"min": list(cfg.grid.mins), "max": list(cfg.grid.maxs), "count": list(cfg.grid.counts)},
        "target": target,
        "solve": {"horizon": cfg.solve.horizon, "cfl": cfg.solve.cfl, "save_every": cfg.solve.save_every,
                  "convergence_eps": cfg.solve.convergence_eps, "mode": cfg.solve.mode},
        "guards": {"guard_band": g.guard_band, "safe_margin": g.safe_margin, "band_cells": g.band_cells,
                   "recovery_target": _box_dict(g.recovery_target), "eps_vx": g.eps_vx, "eps_vy": g.eps_vy},
        "gains": {"nominal": gains(cfg.nominal_gains), "evasive": gains(cfg.evasive_gains)},
        "escape": {"radial": cfg.offsets.radial, "drift": cfg.offsets.drift, "tangential": cfg.offsets.tangential},
        "supervisor": {
            "nominal_target": "hold" if cfg.supervisor.nominal_target is None else list(cfg.supervisor.nominal_target),
            "evasive_policy": cfg.supervisor.evasive_policy,
            "override_band": cfg.supervisor.override_band,
            "lookahead": cfg.supervisor.lookahead,
            "preview_dt": cfg.supervisor.preview_dt,
        },
        "sim": {
            "dt": s.dt,
            "duration": s.duration,
            "initial": list(s.initial),
            "disturbance": {"type": s.disturbance.kind, "value": list(s.disturbance.value)},
            "player1": s.player1,
            "seed": s.seed,
            "runs": s.runs,
            "workers": s.workers,
            "sampler": {
                "box": None if s.sampler.box is None else [list(b) for b in s.sampler.box],
                "phi_above": s.sampler.phi_above,
                "phi_below": s.sampler.phi_below,
                "outside_disc": s.sampler.outside_disc,
            },
        },
        "output_dir": cfg.output_dir,
    }


def parse_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: not valid YAML ({exc})") from None
    return config_from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc}") from None
    return parse_config(text)


SHIPPED = ("recovery_1000m", "collision_tube", "double_integrator_check")


def shipped_config_path(name: str) -> Path:
    if name not in SHIPPED:
        raise KeyError(f"unknown shipped config {name!r}; choose from {SHIPPED}")
    return Path(__file__).parent / "configs" / f"{name}.yaml"


def load_shipped(name: str) -> RunConfig:
    return load_config(shipped_config_path(name))
