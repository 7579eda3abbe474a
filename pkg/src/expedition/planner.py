"""Online planning over the GP belief: max-value information reward, PW-MCTS, baselines."""

from __future__ import annotations

import enum
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from . import mcts
from .errors import InvalidParametersError
from .gp import GPBelief, gp_predict, max_values_from_moments
from .plume import (
    DEFAULT_D_STEP,
    DEFAULT_DURATION,
    DEFAULT_OMEGA_MAX,
    DEFAULT_V,
    Box,
    MotionPrimitive,
    Pose,
    step,
)

SIGMA_FLOOR = 1e-9


class PolicyKind(str, enum.Enum):
    MCTS = "mcts"
    GREEDY_MYOPIC = "greedy_myopic"
    LAWNMOWER_FIXED = "lawnmower_fixed"
    RANDOM = "random"


@dataclass(frozen=True)
class PlannerConfig:
    gamma: float = 0.95
    H: int = 5
    budget: int = 300
    c_ucb: float = 0.5  # multiplies the running max single-step reward
    k_pw: float = 2.0
    alpha_pw: float = 0.5
    M_maxvals: int = 10
    rollout_depth: int = 3
    fantasy_mode: str = "sampled"
    lattice_n: int = 7  # horizontal side of the max-value lattice

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise InvalidParametersError("gamma must lie in (0, 1]")
        if self.H < 1:
            raise InvalidParametersError("H must be >= 1")
        if self.budget < 1:
            raise InvalidParametersError("budget must be >= 1")
        if not self.k_pw > 0:
            raise InvalidParametersError("k_pw must be > 0")
        if not 0 < self.alpha_pw < 1:
            raise InvalidParametersError("alpha_pw must lie in (0, 1)")
        if self.c_ucb < 0:
            raise InvalidParametersError("c_ucb must be >= 0")
        if self.M_maxvals < 1:
            raise InvalidParametersError("M_maxvals must be >= 1")
        if self.rollout_depth < 0:
            raise InvalidParametersError("rollout_depth must be >= 0")
        if self.fantasy_mode not in ("sampled", "mean"):
            raise InvalidParametersError("fantasy_mode must be 'sampled' or 'mean'")
        if self.lattice_n < 1:
            raise InvalidParametersError("lattice_n must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Motion:
    """Vehicle kinematic limits shared by planners and the episode loop."""

    v: float = DEFAULT_V
    duration: float = DEFAULT_DURATION
    omega_max: float = DEFAULT_OMEGA_MAX
    d_step: float = DEFAULT_D_STEP


def mvi_reward(mu: float, sigma: float, maxvals) -> float:
    """Max-value information of observing a point with posterior N(mu, sigma^2)."""
    return _mvi(float(mu), float(sigma), np.ascontiguousarray(maxvals, dtype=np.float64))


TAIL = -30.0  # below this gamma the two terms cancel to ~g^2 * eps; use the expansion


@njit(cache=True)
def _log_ndtr(g):
    if g > 5.0:
        return math.log1p(-0.5 * math.erfc(g / math.sqrt(2.0)))
    return math.log(0.5 * math.erfc(-g / math.sqrt(2.0)))


@njit(cache=True)
def _mes_term(g):
    """g phi(g) / (2 Phi(g)) - ln Phi(g)."""
    if g >= TAIL:
        lc = _log_ndtr(g)
        ratio = math.exp(-0.5 * g * g - 0.5 * math.log(2.0 * math.pi) - lc)
        return 0.5 * g * ratio - lc
    # large-x expansions of the Mills ratio, x = -g, y = 1/x^2
    x = -g
    y = 1.0 / (x * x)
    mills = 1.0 - y + 3.0 * y * y - 15.0 * y**3 + 105.0 * y**4
    return (-0.5 + y - 5.0 * y * y + 37.0 * y**3 + math.log(x) + 0.5 * math.log(2.0 * math.pi)
            - math.log(mills))


@njit(cache=True)
def _mvi(mu, sigma, maxvals):
    s = max(sigma, SIGMA_FLOOR)
    total = 0.0
    for z in maxvals:
        total += _mes_term((z - mu) / s)
    r = total / maxvals.shape[0]
    return r if r > 0.0 else 0.0


def episode_value(rewards, gamma: float) -> float:
    """Discounted return sum_t gamma^t r_t."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        return 0.0
    return float(np.sum(r * gamma ** np.arange(r.size)))


# --- GP fantasy model for the tree search ---------------------------------
#
# params: (Xs, L, alpha, scal, maxvals, root, box, motion, inv_scales)
#   scal   = [sigma_f^2, sigma_n^2, jitter, fantasy_mode(0 sampled, 1 mean)]
#   root   = [x, y, z, heading, t]
#   box    = [xmin, xmax, ymin, ymax, zmin, zmax]
#   motion = [v, duration, omega_max, d_step]
# ws: (pose[5], F[H,4], V[H,n], Lf[H,H], w[H], m[1], kb[n], v[n], c[H], u[H])


@njit(cache=True)
def _gp_reset(params, ws):
    root = params[5]
    pose = ws[0]
    for i in range(5):
        pose[i] = root[i]
    ws[5][0] = 0


@njit(cache=True)
def _gp_random_action(params, ws, depth, out):
    d_step = params[7][3]
    out[0] = np.random.random() * 2.0 * math.pi
    if d_step > 0.0:
        out[1] = (np.random.randint(0, 3) - 1) * d_step
    else:
        out[1] = 0.0


@njit(cache=True)
def _gp_propose(params, ws, depth, n_existing, out):
    _gp_random_action(params, ws, depth, out)
    return True


@njit(cache=True)
def _move(pose, action, box, motion):
    v, dur, om, _ = motion[0], motion[1], motion[2], motion[3]
    limit = om * dur
    two_pi = 2.0 * math.pi
    d = (action[0] - pose[3]) % two_pi
    if d > math.pi:
        d -= two_pi
    d = min(max(d, -limit), limit)
    h = (pose[3] + d) % two_pi
    x = pose[0] + v * dur * math.cos(h)
    y = pose[1] + v * dur * math.sin(h)
    z = pose[2] + action[1]
    pose[0] = min(max(x, box[0]), box[1])
    pose[1] = min(max(y, box[2]), box[3])
    pose[2] = min(max(z, box[4]), box[5])
    pose[3] = h
    pose[4] += dur


@njit(cache=True, fastmath={"reassoc", "contract"})
def _gp_step(params, ws, depth, action):
    Xs, L, alpha, scal, maxvals = params[0], params[1], params[2], params[3], params[4]
    box, motion, inv = params[6], params[7], params[8]
    pose, F, V, Lf, w, mm, kb, v, c, u = ws
    sf2, sn2, jit, mode = scal[0], scal[1], scal[2], scal[3]
    _move(pose, action, box, motion)
    q0 = pose[0] * inv[0]
    q1 = pose[1] * inv[1]
    q2 = pose[2] * inv[2]
    q3 = pose[4] * inv[3]
    n = Xs.shape[0]
    mu = 0.0
    for i in range(n):
        d0 = Xs[i, 0] - q0
        d1 = Xs[i, 1] - q1
        d2 = Xs[i, 2] - q2
        d3 = Xs[i, 3] - q3
        kb[i] = sf2 * math.exp(-0.5 * (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3))
        mu += kb[i] * alpha[i]
    vv = 0.0
    for i in range(n):
        s = kb[i]
        for j in range(i):
            s -= L[i, j] * v[j]
        v[i] = s / L[i, i]
        vv += v[i] * v[i]
    var = sf2 - vv
    m = mm[0]
    for j in range(m):
        d0 = F[j, 0] - q0
        d1 = F[j, 1] - q1
        d2 = F[j, 2] - q2
        d3 = F[j, 3] - q3
        s = sf2 * math.exp(-0.5 * (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3))
        for i in range(n):
            s -= v[i] * V[j, i]
        c[j] = s
    for j in range(m):
        s = c[j]
        for i in range(j):
            s -= Lf[j, i] * u[i]
        u[j] = s / Lf[j, j]
        mu += u[j] * w[j]
        var -= u[j] * u[j]
    if var < 1e-15 * sf2:
        var = 1e-15 * sf2
    reward = _mvi(mu, math.sqrt(var), maxvals)
    if mode == 0.0:
        y = mu + math.sqrt(var + sn2) * np.random.standard_normal()
    else:
        y = mu
    if m < F.shape[0]:
        F[m, 0] = q0
        F[m, 1] = q1
        F[m, 2] = q2
        F[m, 3] = q3
        for i in range(n):
            V[m, i] = v[i]
        for i in range(m):
            Lf[m, i] = u[i]
        dd = math.sqrt(var + sn2 + jit)
        Lf[m, m] = dd
        w[m] = (y - mu) / dd
        mm[0] = m + 1
    return 0, reward


GP_MODEL = (_gp_reset, _gp_propose, _gp_step, _gp_random_action)


def reachable_lattice(pose: Pose, t: float, cfg: PlannerConfig, box: Box, motion: Motion):
    """(x, y, z, t) rows covering the region reachable within the horizon."""
    R = motion.v * motion.duration * cfg.H
    n = cfg.lattice_n
    xs = np.clip(np.linspace(pose.x - R, pose.x + R, n), box.xmin, box.xmax)
    ys = np.clip(np.linspace(pose.y - R, pose.y + R, n), box.ymin, box.ymax)
    dz = motion.d_step * cfg.H
    zs = np.unique(np.clip([pose.z - dz, pose.z, pose.z + dz], box.zmin, box.zmax))
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), Z.ravel(), np.full(X.size, t)])


def draw_maxvals(b: GPBelief, pose, t, cfg, box, motion, rng):
    grid = reachable_lattice(pose, t, cfg, box, motion)
    mu, var = gp_predict(b, grid)
    return max_values_from_moments(mu, np.sqrt(var), cfg.M_maxvals, rng)


def _gp_params(b: GPBelief, pose: Pose, t, cfg, box, motion, maxvals):
    inv = b.hyper.inv_scales
    Xs = np.ascontiguousarray(b.X * inv) if len(b) else np.zeros((0, 4))
    L = np.ascontiguousarray(b.L) if len(b) else np.zeros((0, 0))
    alpha = np.ascontiguousarray(b.alpha, dtype=float)
    scal = np.array([b.hyper.sigma_f**2, b.hyper.sigma_n**2, b.jitter,
                     0.0 if cfg.fantasy_mode == "sampled" else 1.0])
    params = (
        Xs, L, alpha, scal, np.asarray(maxvals, dtype=float),
        np.array([pose.x, pose.y, pose.z, pose.heading, t], dtype=float),
        np.array([box.xmin, box.xmax, box.ymin, box.ymax, box.zmin, box.zmax], dtype=float),
        np.array([motion.v, motion.duration, motion.omega_max, motion.d_step], dtype=float),
        np.ascontiguousarray(inv),
    )
    n, H = len(b), cfg.H
    ws = (np.zeros(5), np.zeros((H, 4)), np.zeros((H, n)), np.zeros((H, H)), np.zeros(H),
          np.zeros(1, np.int64), np.zeros(n), np.zeros(n), np.zeros(H), np.zeros(H))
    return params, ws


def plan_mcts(b: GPBelief, pose: Pose, t: float, cfg: PlannerConfig, env_box: Box, rng,
              motion: Motion | None = None, info: dict | None = None) -> MotionPrimitive:
    """Choose the next motion primitive by PW-MCTS over fantasized GP updates.

    ``info``, if given, receives telemetry: simulations, tree size, wall time
    and the search tree itself.
    """
    motion = motion or Motion()
    if not env_box.contains(pose.x, pose.y, pose.z):
        raise InvalidParametersError("pose lies outside the operating box")
    t0 = time.perf_counter()
    maxvals = draw_maxvals(b, pose, t, cfg, env_box, motion, rng)
    params, ws = _gp_params(b, pose, t, cfg, env_box, motion, maxvals)
    seed = int(rng.integers(0, 2**31 - 1))
    tree = mcts.search(GP_MODEL, params, ws, 2, budget=cfg.budget, H=cfg.H, gamma=cfg.gamma,
                       c_ucb=cfg.c_ucb, k_pw=cfg.k_pw, alpha_pw=cfg.alpha_pw,
                       rollout_depth=cfg.rollout_depth, seed=seed)
    heading, dz = tree.root_action
    if info is not None:
        info.update(simulations=tree.simulations, tree_size=tree.size,
                    wall_ms=1e3 * (time.perf_counter() - t0), tree=tree, maxvals=maxvals)
    return MotionPrimitive(heading=float(heading), delta_depth=float(dz), duration=motion.duration)


def greedy_action(b: GPBelief, pose: Pose, t, cfg, box, motion, rng, n_headings=16):
    maxvals = draw_maxvals(b, pose, t, cfg, box, motion, rng)
    headings = 2 * math.pi * np.arange(n_headings) / n_headings
    pts = []
    for h in headings:
        p, _ = step(pose, MotionPrimitive(h, 0.0, motion.duration), box, motion.v, motion.omega_max)
        pts.append((p.x, p.y, p.z, t + motion.duration))
    mu, var = gp_predict(b, np.array(pts))
    scores = [mvi_reward(m, math.sqrt(s), maxvals) for m, s in zip(mu, var)]
    return MotionPrimitive(float(headings[int(np.argmax(scores))]), 0.0, motion.duration)


def baseline_action(kind, b, pose: Pose, t, cfg: PlannerConfig, rng, *, box: Box | None = None,
                    motion: Motion | None = None, lawnmower=None) -> MotionPrimitive:
    """Non-tree policies.  ``lawnmower`` is a callable t -> (x, y, z) for the fixed survey."""
    kind = PolicyKind(kind)
    motion = motion or Motion()
    box = box or Box()
    if kind is PolicyKind.RANDOM:
        return MotionPrimitive(float(rng.random() * 2 * math.pi), 0.0, motion.duration)
    if kind is PolicyKind.GREEDY_MYOPIC:
        return greedy_action(b, pose, t, cfg, box, motion, rng)
    if kind is PolicyKind.LAWNMOWER_FIXED:
        if lawnmower is None:
            raise InvalidParametersError("lawnmower_fixed needs a lawnmower path")
        x, y, z = lawnmower(t + motion.duration)
        heading = math.atan2(y - pose.y, x - pose.x) % (2 * math.pi)
        if math.hypot(x - pose.x, y - pose.y) < 1e-9:
            heading = pose.heading
        dz = float(np.clip(z - pose.z, -motion.d_step, motion.d_step))
        return MotionPrimitive(heading, dz, motion.duration)
    raise InvalidParametersError(f"{kind.value} is not a baseline policy")
