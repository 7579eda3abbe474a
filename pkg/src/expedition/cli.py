"""Command-line entry point: ``expedition <simulate|bench|forecast|optimize|render>``.

Exit codes: 0 success, 1 invalid input (bad config, arguments or files),
2 runtime failure (including an episode that aborted with a partial trace).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import run_bench
from .config import MissionConfig
from .episode import EpisodeTrace, run_episode, write_episode
from .errors import ConfigError, InfeasibleError, InvalidArgumentError, InvalidParametersError
from .errors import InvalidPriorError, OutOfRangeError
from .particles import particle_init
from .phumes import ForecastGrid, default_lawnmower, expected_inplume, forecast, lawnmower_waypoints
from .phumes import optimize_lawnmower
from .planner import PolicyKind
from .plume import VentParams
from .render import plot_episode, plot_forecast, render_svg

log = logging.getLogger("expedition")

VALIDATION_ERRORS = (ConfigError, InvalidArgumentError, InvalidParametersError, InvalidPriorError,
                     OutOfRangeError, InfeasibleError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_seeds(text: str):
    """'3..7' (inclusive) or '1,4,9'."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"--seeds: expected 'start..end' or a comma list, got {text!r}") from exc
    if not seeds:
        raise UsageError("--seeds: empty")
    return seeds


def parse_policies(text: str):
    names = [p.strip() for p in text.split(",") if p.strip()]
    valid = [k.value for k in PolicyKind]
    for n in names:
        if n not in valid:
            raise UsageError(f"--policies: unknown policy {n!r} (choose from {', '.join(valid)})")
    if not names:
        raise UsageError("--policies: empty")
    return names


def cmd_simulate(args):
    cfg = MissionConfig.load(args.config)
    trace, summary = run_episode(cfg, args.policy, args.seed)
    out = Path(args.out)
    write_episode(trace, summary, out)
    theta = VentParams.from_dict(summary.theta)
    render_svg(trace, box=cfg.env.box, vent=(theta.vent_x, theta.vent_y), out=out / "map.svg")
    if not args.no_figures:
        plot_episode(trace, out / "signals.png", title=f"{summary.policy}, seed {summary.seed}")
    log.info("regret %.6g, in-plume %.3f", summary.metrics["maxseek_regret"], summary.metrics["inplume_fraction"])
    if summary.status != "ok":
        log.error("episode failed: %s", summary.reason)
        return 2
    return 0


def cmd_bench(args):
    cfg = MissionConfig.load(args.config)
    report = run_bench(cfg, parse_policies(args.policies), parse_seeds(args.seeds))
    report.write(args.out, figure=not args.no_figures)
    for c in report.comparisons:
        if "p_less" in c:
            log.info("%s < %s: W+=%g p=%.4g (n=%d)", c["a"], c["b"], c["statistic"], c["p_less"], c["n_nonzero"])
    failed = [c for c in report.cells if c["status"] != "ok"]
    for c in failed:
        log.warning("cell %s/%s failed: %s", c["policy"], c["seed"], c["reason"])
    return 0


def cmd_forecast(args):
    cfg = MissionConfig.load(args.config)
    if args.particles < 1:
        raise UsageError("--particles must be >= 1")
    pb = particle_init(cfg.env.prior, args.particles, np.random.default_rng(cfg.seed))
    grid = forecast(pb, cfg.grid_spec, cfg.phumes.c_thresh)
    grid.save(args.out)
    if not args.no_figures:
        plot_forecast(grid, Path(args.out) / "forecast.png")
    return 0


def cmd_optimize(args):
    cfg = MissionConfig.load(args.config)
    grid = ForecastGrid.load(args.grid)
    cons = cfg.constraints
    spec, score = optimize_lawnmower(grid, cons, cfg.phumes.opt)
    base = default_lawnmower(cons)
    doc = {
        "lawnmower": spec.to_dict(),
        "score": score,
        "default_lawnmower": base.to_dict(),
        "default_score": expected_inplume(grid, lawnmower_waypoints(base, cons)),
    }
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_render(args):
    trace = EpisodeTrace.from_csv(Path(args.trace).read_text())
    grid = ForecastGrid.load(args.grid) if args.grid else None
    vent = None
    summary = Path(args.trace).with_name("summary.json")
    if summary.exists():
        th = json.loads(summary.read_text())["theta"]
        vent = (th["vent_x"], th["vent_y"])
    box = MissionConfig.load(args.config).env.box if args.config else None
    render_svg(trace, grid, args.z_slice, args.t_slice, args.out, box=box, vent=vent)
    return 0


def build_parser():
    p = _Parser(prog="expedition", description="Plume-mapping mission simulator and planners.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one episode")
    s.add_argument("--config", required=True)
    s.add_argument("--policy", required=True, choices=[k.value for k in PolicyKind])
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-figures", action="store_true", help="skip the matplotlib PNG")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="run a policy x seed benchmark")
    b.add_argument("--config", required=True)
    b.add_argument("--policies", required=True)
    b.add_argument("--seeds", required=True, help="'start..end' (inclusive) or a comma list")
    b.add_argument("--out", required=True)
    b.add_argument("--no-figures", action="store_true")
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("forecast", help="particle forecast of in-plume probability")
    f.add_argument("--config", required=True)
    f.add_argument("--particles", type=int, required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--no-figures", action="store_true")
    f.set_defaults(func=cmd_forecast)

    o = sub.add_parser("optimize", help="optimize a lawnmower survey against a forecast")
    o.add_argument("--grid", required=True)
    o.add_argument("--config", required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_optimize)

    r = sub.add_parser("render", help="render a trace (and forecast slice) to SVG")
    r.add_argument("--trace", required=True)
    r.add_argument("--grid")
    r.add_argument("--z-slice", type=int, default=0)
    r.add_argument("--t-slice", type=int, default=0)
    r.add_argument("--config", help="take the map extent from this config's box")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"expedition: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"expedition: error: {exc}", file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as exc:
        print(f"expedition: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"expedition: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
