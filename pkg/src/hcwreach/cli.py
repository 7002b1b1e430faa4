"""Command line: ``hcwreach brt compute|slice`` and ``hcwreach sim run|sweep``.

Exit codes: 0 success, 1 configuration/usage/file-format error, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .levelset import AXES, FieldFormatError, build_target_field, cell_increment_scale, read_field, write_field, zero_contour_slice
from .sim import DisturbancePolicy, run_episode, run_monte_carlo, run_seeded_episode
from .solver import NumericalFailure, ValueFunctionResult, solve

log = logging.getLogger("hcwreach")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors share the config-error exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out if args.out else (cfg.output_dir if cfg else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_state(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"--initial expects x,y,vx,vy; got {text!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"--initial expects four numbers; got {text!r}") from None
    if not all(np.isfinite(vals)):
        raise UsageError("--initial values must be finite")
    return vals


def _parse_fix(items) -> dict:
    fixed = {}
    for item in items or []:
        name, sep, val = item.partition("=")
        if not sep or name not in AXES:
            raise UsageError(f"--fix expects AXIS=VALUE with AXIS in {AXES}; got {item!r}")
        if name in fixed:
            raise UsageError(f"axis {name} fixed twice")
        try:
            fixed[name] = float(val)
        except ValueError:
            raise UsageError(f"--fix value for {name} is not a number: {val!r}") from None
    if len(fixed) != 2:
        raise UsageError(f"exactly two axes must be fixed with --fix, got {len(fixed)}")
    return fixed


# --- commands ------------------------------------------------------------------------


def cmd_brt_compute(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    phi0 = build_target_field(cfg.grid, cfg.target_set)
    result = solve(phi0, cfg.params, cfg.solve)
    write_field(out / "final.hjf", result.final)
    for i, (t, f) in enumerate(result.checkpoints):
        write_field(out / f"checkpoint_{i:03d}.hjf", f)
    stats = result.stats_record()
    stats["checkpoints"] = [
        {"index": i, "time": t, "file": f"checkpoint_{i:03d}.hjf"} for i, (t, _) in enumerate(result.checkpoints)
    ]
    stats["cell_increment_scale"] = cell_increment_scale(result.final)
    stats["config"] = cfg.name
    _write_json(out / "solve_stats.json", stats)
    log.info("wrote %s (%d steps)", out / "final.hjf", stats["steps"])
    return EXIT_OK


def cmd_brt_slice(args) -> int:
    fixed = _parse_fix(args.fix)
    field = read_field(args.field)
    polylines = zero_contour_slice(field, fixed)
    free = [a for a in AXES if a not in fixed]
    lines = [f"polyline_id,{free[0]},{free[1]}"]
    for pid, poly in enumerate(polylines):
        for a, b in poly:
            lines.append(f"{pid},{a:.17g},{b:.17g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _load_value(cfg: RunConfig, field_path) -> ValueFunctionResult:
    field = read_field(field_path)
    return ValueFunctionResult(final=field, stats={"horizon": cfg.solve.horizon}, params=cfg.params)


def _apply_overrides(cfg: RunConfig, args) -> None:
    if getattr(args, "disturbance", None):
        cfg.sim.disturbance = DisturbancePolicy(kind=args.disturbance, value=cfg.sim.disturbance.value)
    if getattr(args, "seed", None) is not None:
        cfg.sim.seed = args.seed
    if getattr(args, "initial", None):
        cfg.sim.initial = tuple(_parse_state(args.initial))


def cmd_sim_run(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    value = _load_value(cfg, args.field)
    scale = cell_increment_scale(value.final)
    sup = cfg.supervisor_config(value.final, scale)
    if args.sample:
        initial, rec = run_seeded_episode(
            cfg.sim.seed, cfg.sampler(value.final, scale), value, sup, cfg.sim.disturbance,
            cfg.sim.dt, cfg.duration, cfg.params, cfg.sim.player1,
        )
    else:
        rng = np.random.default_rng(cfg.sim.seed)
        initial = cfg.sim.initial
        rec = run_episode(initial, value, sup, cfg.sim.disturbance, cfg.sim.dt, cfg.duration,
                          cfg.params, rng=rng, player1=cfg.sim.player1)
    out = _out_dir(args, cfg)
    (out / "trajectory.csv").write_text(rec.to_csv())
    summary = rec.summary()
    summary.update(
        initial_state=[float(v) for v in initial],
        seed=cfg.sim.seed,
        guard_band=sup.guards.guard_band,
        safe_margin=sup.guards.safe_margin,
        override_band=sup.override_band,
        disturbance=cfg.sim.disturbance.kind,
    )
    _write_json(out / "outcome.json", summary)
    print(summary["outcome"])
    return EXIT_OK


def cmd_sim_sweep(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    value = _load_value(cfg, args.field)
    scale = cell_increment_scale(value.final)
    report = run_monte_carlo(
        cfg.sampler(value.final, scale), args.n if args.n is not None else cfg.sim.runs, cfg.sim.seed,
        value, cfg.supervisor_config(value.final, scale), cfg.sim.disturbance, cfg.sim.dt, cfg.duration,
        cfg.params, player1=cfg.sim.player1,
        workers=args.workers if args.workers is not None else cfg.sim.workers,
    )
    out = _out_dir(args, cfg)
    (out / "report.json").write_text(report.to_json() + "\n")
    print(f"runs={report.runs} violations={report.violations}")
    return EXIT_OK


# --- entry point ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hcwreach", description="HJ reachability for planar HCW collision avoidance")
    p.add_argument("-v", "--verbose", action="store_true")
    top = p.add_subparsers(dest="group", required=True, parser_class=_Parser)

    brt = top.add_parser("brt", help="reachable tube computation")
    brt_sub = brt.add_subparsers(dest="command", required=True, parser_class=_Parser)
    c = brt_sub.add_parser("compute", help="solve the value function")
    c.add_argument("--config", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_brt_compute)
    s = brt_sub.add_parser("slice", help="zero contour of a 2D slice as CSV")
    s.add_argument("--field", required=True)
    s.add_argument("--fix", action="append", metavar="AXIS=VALUE")
    s.add_argument("--out")
    s.set_defaults(func=cmd_brt_slice)

    sim = top.add_parser("sim", help="closed-loop simulation")
    sim_sub = sim.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sim_sub.add_parser("run", help="one episode")
    w = sim_sub.add_parser("sweep", help="Monte Carlo batch")
    for sp in (r, w):
        sp.add_argument("--config", required=True)
        sp.add_argument("--field", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--disturbance", choices=DisturbancePolicy.KINDS)
    r.add_argument("--initial", metavar="x,y,vx,vy")
    r.add_argument("--sample", action="store_true", help="draw the initial state from the sampler using --seed")
    r.set_defaults(func=cmd_sim_run)
    w.add_argument("--n", type=int)
    w.add_argument("--workers", type=int)
    w.set_defaults(func=cmd_sim_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, FieldFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
