"""Closed-loop mission episodes and their scoring."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import MissionConfig
from .errors import ExpeditionError, NumericalError
from .gp import GPBelief, gp_predict, gp_update
from .phumes import default_lawnmower, lawnmower_waypoints, path_position
from .planner import PolicyKind, baseline_action, draw_maxvals, episode_value, mvi_reward, plan_mcts
from .plume import Box, Pose, sample_params, step, observe, tracer_fields

TRACE_COLUMNS = ("step", "t", "x", "y", "z", "heading", "action_heading", "action_dz",
                 "clipped", "reactive", "turbidity", "reward", "cum_reward")
EVAL_N = 64


@dataclass
class TraceRow:
    step: int
    t: float
    x: float
    y: float
    z: float
    heading: float
    action_heading: float  # nan on the deployment row
    action_dz: float
    clipped: bool
    reactive: float
    turbidity: float
    reward: float
    cum_reward: float  # discounted return up to and including this row
    plan_ms: float = 0.0  # wall clock; kept out of the deterministic CSV


@dataclass
class EpisodeTrace:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def positions(self):
        return np.array([(r.x, r.y, r.z) for r in self.rows]).reshape(-1, 3)

    def times(self):
        return np.array([r.t for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in TRACE_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EpisodeTrace":
        rows = []
        for d in csv.DictReader(io.StringIO(text)):
            rows.append(TraceRow(
                int(d["step"]), *(float(d[c]) if d[c] != "" else math.nan for c in TRACE_COLUMNS[1:8]),
                d["clipped"] == "1", *(float(d[c]) for c in TRACE_COLUMNS[9:]),
            ))
        return cls(rows)


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(float(v))  # numpy 2 scalars repr as np.float64(...)
    return str(v)


@dataclass
class Summary:
    policy: str
    seed: int
    status: str  # "ok" or "failed"
    reason: str
    theta: dict
    metrics: dict
    planning: dict
    wall_s: float = 0.0  # kept out of the deterministic JSON

    def to_dict(self):
        return {"policy": self.policy, "seed": self.seed, "status": self.status, "reason": self.reason,
                "theta": self.theta, "metrics": self.metrics, "planning": self.planning}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# --- metrics ---------------------------------------------------------------

def eval_depth(theta, box: Box, depth_band, d_step, t_eval, channel="reactive", n=EVAL_N):
    """Band level (every d_step from the top of the band down) holding the largest true signal."""
    lo, hi = depth_band
    levels = np.arange(hi, lo - 1e-9, -d_step) if d_step > 0 else np.array([hi])
    xs, ys = _eval_axes(box, n)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    best_z, best = levels[0], -np.inf
    for z in levels:
        f = _true_field(theta, X, Y, np.full_like(X, z), t_eval, channel)
        if f.max() > best:
            best, best_z = f.max(), z
    return float(best_z)


def _eval_axes(box: Box, n):
    xs = box.xmin + (np.arange(n) + 0.5) * (box.xmax - box.xmin) / n
    ys = box.ymin + (np.arange(n) + 0.5) * (box.ymax - box.ymin) / n
    return xs, ys


def _true_field(theta, x, y, z, t, channel):
    r, c = tracer_fields(theta, x, y, z, t)
    return r if channel == "reactive" else c


def eval_grid(box: Box, z: float, n=EVAL_N):
    """(n*n, 3) horizontal cell-center grid at depth z, x fastest."""
    xs, ys = _eval_axes(box, n)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, z)])


def maxseek_regret(b: GPBelief, theta_true, grid, t_eval: float) -> float:
    """True max over the grid minus the true value where the posterior mean peaks.

    Ties in the posterior mean go to the lowest grid index.
    """
    P = np.asarray(grid, dtype=float).reshape(-1, 3)
    f = _true_field(theta_true, P[:, 0], P[:, 1], P[:, 2], t_eval, b.channel)
    mu, _ = gp_predict(b, np.column_stack([P, np.full(len(P), t_eval)]))
    return float(f.max() - f[int(np.argmax(mu))])


def inplume_fraction(trace: EpisodeTrace, theta_true, c_thresh: float) -> float:
    """Share of trace rows whose true conserved tracer reaches c_thresh."""
    if len(trace) == 0:
        return 0.0
    P = trace.positions()
    _, c = tracer_fields(theta_true, P[:, 0], P[:, 1], P[:, 2], trace.times())
    return float(np.mean(c >= c_thresh))


# --- episode loop ------------------------------------------------------------

def start_pose(cfg: MissionConfig, policy=None) -> Pose:
    """Deployment pose.

    A configured start wins.  Otherwise the fixed survey begins at its first
    waypoint facing along the first leg, and every other policy is deployed
    over the prior-mean vent position at the mission depth.
    """
    if cfg.mission.start is not None:
        return Pose(*cfg.mission.start)
    if policy is not None and PolicyKind(policy) is PolicyKind.LAWNMOWER_FIXED:
        W = lawnmower_waypoints(survey(cfg), cfg.constraints)
        heading = math.atan2(W[1, 1] - W[0, 1], W[1, 0] - W[0, 0]) % (2 * math.pi) if len(W) > 1 else 0.0
        return Pose(float(W[0, 0]), float(W[0, 1]), float(W[0, 2]), heading)
    box = cfg.vehicle_box
    x, y = (float(np.clip(0.5 * sum(cfg.env.prior.bounds[k]), lo, hi))
            for k, lo, hi in (("vent_x", box.xmin, box.xmax), ("vent_y", box.ymin, box.ymax)))
    return Pose(x, y, cfg.mission.depth, 0.0)


def survey(cfg: MissionConfig):
    return default_lawnmower(cfg.constraints, z=cfg.mission.depth, multiple=cfg.mission.v * cfg.mission.duration)


def world_theta(cfg: MissionConfig, world_rng):
    return cfg.env.theta if cfg.env.theta is not None else sample_params(cfg.env.prior, world_rng)


def run_episode(cfg: MissionConfig, policy, seed: int, world_seed: int | None = None):
    """Run one mission.  Returns ``(EpisodeTrace, Summary)``.

    ``seed`` drives the policy; ``world_seed`` (default ``seed``) drives the
    true parameters and sensor noise, so policies compared on the same world
    seed face the same vent and the same noise sequence.
    """
    policy = PolicyKind(policy)
    world_seed = seed if world_seed is None else world_seed
    world_ss, noise_ss = np.random.SeedSequence([world_seed, 0]).spawn(2)
    policy_ss, metric_ss = np.random.SeedSequence([seed, 1]).spawn(2)
    theta = world_theta(cfg, np.random.default_rng(world_ss))
    noise_rng = np.random.default_rng(noise_ss)
    policy_rng = np.random.default_rng(policy_ss)
    metric_rng = np.random.default_rng(metric_ss)

    m = cfg.mission
    motion = cfg.motion
    box = cfg.vehicle_box
    channel = cfg.gp.channel
    sigma = cfg.env.sigma_sensor
    lawnmower = None
    if policy is PolicyKind.LAWNMOWER_FIXED:
        path = survey(cfg)
        lawnmower = lambda t: path_position(path, cfg.constraints, t)  # noqa: E731

    t_start = time.perf_counter()
    pose = start_pose(cfg, policy)
    t = 0.0
    b = GPBelief(cfg.gp.hyper, channel=channel, capacity=cfg.gp.capacity)
    obs = observe(theta, pose, t, sigma, noise_rng)
    b = gp_update(b, obs)
    trace = EpisodeTrace([TraceRow(0, t, pose.x, pose.y, pose.z, pose.heading, math.nan, math.nan,
                                   False, obs.reactive, obs.turbidity, 0.0, 0.0)])
    sims, sizes = [], []
    status, reason = "ok", ""
    cum, discount = 0.0, 1.0
    n_steps = int(math.floor(m.T_budget / m.duration + 1e-9))
    for k in range(1, n_steps + 1):
        t0 = time.perf_counter()
        try:
            if policy is PolicyKind.MCTS:
                info = {}
                a = plan_mcts(b, pose, t, cfg.planner, box, policy_rng, motion, info)
                sims.append(info["simulations"])
                sizes.append(info["tree_size"])
            else:
                a = baseline_action(policy, b, pose, t, cfg.planner, policy_rng, box=box,
                                    motion=motion, lawnmower=lawnmower)
        except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
            status, reason = "failed", f"planner numerical failure at step {k}: {exc}"
            break
        plan_ms = 1e3 * (time.perf_counter() - t0)
        pose, clipped = step(pose, a, box, motion.v, motion.omega_max)
        t = k * m.duration
        obs = observe(theta, pose, t, sigma, noise_rng)
        reward = _step_reward(b, pose, t, cfg, box, motion, metric_rng)
        try:
            b = gp_update(b, obs)
        except ExpeditionError as exc:
            status, reason = "failed", f"belief update failure at step {k}: {exc}"
            break
        cum += discount * reward
        discount *= cfg.planner.gamma
        trace.rows.append(TraceRow(k, t, pose.x, pose.y, pose.z, pose.heading, a.heading, a.delta_depth,
                                   clipped, obs.reactive, obs.turbidity, reward, cum, plan_ms))

    t_eval = trace.rows[-1].t
    z_eval = eval_depth(theta, cfg.env.box, m.depth_band, m.d_step, t_eval, channel)
    rewards = [r.reward for r in trace.rows[1:]]
    metrics = {
        "maxseek_regret": maxseek_regret(b, theta, eval_grid(cfg.env.box, z_eval), t_eval),
        "inplume_fraction": inplume_fraction(trace, theta, cfg.phumes.c_thresh),
        "cumulative_reward": episode_value(rewards, cfg.planner.gamma),
        "total_reward": float(np.sum(rewards)) if rewards else 0.0,
        "steps": len(trace) - 1,
        "eval_depth": z_eval,
        "t_eval": t_eval,
    }
    planning = {
        "simulations_mean": float(np.mean(sims)) if sims else 0.0,
        "tree_size_mean": float(np.mean(sizes)) if sizes else 0.0,
    }
    summary = Summary(policy.value, int(seed), status, reason, theta.to_dict(), metrics, planning,
                      time.perf_counter() - t_start)
    return trace, summary


def _step_reward(b, pose, t, cfg, box, motion, rng):
    """Max-value information of the new reading under the belief before it arrives."""
    maxvals = draw_maxvals(b, pose, t, cfg.planner, box, motion, rng)
    mu, var = gp_predict(b, np.array([[pose.x, pose.y, pose.z, t]]))
    return mvi_reward(float(mu[0]), math.sqrt(float(var[0])), maxvals)


def write_episode(trace: EpisodeTrace, summary: Summary, out_dir):
    """trace.csv and summary.json are byte-deterministic; telemetry.json carries wall clock."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(trace.to_csv())
    (out / "summary.json").write_text(summary.to_json())
    tele = {"wall_s": summary.wall_s, "plan_ms": [r.plan_ms for r in trace.rows]}
    (out / "telemetry.json").write_text(json.dumps(tele, indent=2) + "\n")
