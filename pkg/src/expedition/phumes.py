"""Particle-sampled plume forecasts and lawnmower survey optimization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InfeasibleError, InvalidParametersError
from .particles import ParamParticleBelief
from .plume import Box, conserved_on_grid

DEFAULT_C_THRESH = 1e-3


@dataclass(frozen=True)
class GridSpec:
    x0: float = 0.0
    y0: float = 0.0
    z0: float = 0.0
    nx: int = 64
    ny: int = 64
    nz: int = 16
    nt: int = 8
    dx: float = 2000.0 / 64
    dy: float = 2000.0 / 64
    dz: float = 400.0 / 16
    dt: float = 1800.0
    t0: float = 0.0

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz, self.nt) < 1:
            raise InvalidParametersError("grid counts must be >= 1")
        if min(self.dx, self.dy, self.dz, self.dt) <= 0:
            raise InvalidParametersError("grid spacings must be > 0")

    @classmethod
    def over_box(cls, box: Box, duration: float, nx=64, ny=64, nz=16, dt=1800.0, t0=0.0):
        nt = max(1, int(math.ceil(duration / dt)))
        return cls(box.xmin, box.ymin, box.zmin, nx, ny, nz, nt,
                   (box.xmax - box.xmin) / nx, (box.ymax - box.ymin) / ny,
                   (box.zmax - box.zmin) / nz, dt, t0)

    @property
    def shape(self):
        """Array shape (nt, nz, ny, nx); C-order flattening is x-fastest."""
        return (self.nt, self.nz, self.ny, self.nx)

    def centers(self):
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.dy
        zs = self.z0 + (np.arange(self.nz) + 0.5) * self.dz
        ts = self.t0 + (np.arange(self.nt) + 0.5) * self.dt
        return xs, ys, zs, ts

    def cell_index(self, x, y, z, t):
        """Flat (it, iz, iy, ix) indices of the cells containing the points; -1 outside.

        The grid is closed: a point on the far face belongs to the last cell,
        so a survey ending exactly at the time or box limit is still counted.
        """
        u = [(np.asarray(v, dtype=float) - o) / d
             for v, o, d in ((t, self.t0, self.dt), (z, self.z0, self.dz),
                             (y, self.y0, self.dy), (x, self.x0, self.dx))]
        inside = np.ones(np.broadcast(*u).shape, dtype=bool)
        for ui, n in zip(u, self.shape):
            inside &= (ui >= -1e-9) & (ui <= n + 1e-9)
        idx = tuple(np.clip(np.floor(ui), 0, n - 1).astype(np.int64) for ui, n in zip(u, self.shape))
        return np.where(inside, np.ravel_multi_index(idx, self.shape), -1)


@dataclass(frozen=True)
class ForecastGrid:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(self.spec.shape)
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise InvalidParametersError("forecast values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "grid.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ix", "iy", "iz", "it", "p"])
            nt, nz, ny, nx = self.spec.shape
            for it in range(nt):
                for iz in range(nz):
                    for iy in range(ny):
                        row = self.values[it, iz, iy]
                        for ix in range(nx):
                            w.writerow([ix, iy, iz, it, repr(float(row[ix]))])
        (out / "grid.meta.json").write_text(json.dumps(asdict(self.spec), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, in_dir):
        d = Path(in_dir)
        spec = GridSpec(**json.loads((d / "grid.meta.json").read_text()))
        values = np.zeros(spec.shape)
        with open(d / "grid.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                values[int(row["it"]), int(row["iz"]), int(row["iy"]), int(row["ix"])] = float(row["p"])
        return cls(spec, values)


def forecast(pb: ParamParticleBelief, spec: GridSpec, c_thresh: float = DEFAULT_C_THRESH) -> ForecastGrid:
    """Weighted fraction of particles whose conserved tracer reaches ``c_thresh`` per cell."""
    if not c_thresh > 0:
        raise InvalidParametersError("c_thresh must be > 0")
    xs, ys, zs, ts = spec.centers()
    P = np.zeros(spec.shape)
    for theta, w in zip(pb.particles, pb.weights):
        if w == 0:
            continue
        for it, t in enumerate(ts):
            P[it] += w * (conserved_on_grid(theta, xs, ys, zs, t) >= c_thresh)
    return ForecastGrid(spec, np.clip(P, 0.0, 1.0))


@dataclass(frozen=True)
class OpConstraints:
    box: Box = field(default_factory=Box)
    T_budget: float = 4 * 3600.0
    v: float = 1.0
    delta: float = 30.0
    depth_band: tuple = (250.0, 350.0)
    min_spacing: float = 0.0  # cross-leg step the vehicle can turn through, e.g. its turn diameter

    def __post_init__(self):
        if not self.T_budget > 0:
            raise InvalidParametersError("T_budget must be > 0")
        if not self.delta > 0:
            raise InvalidParametersError("delta must be > 0")
        if not self.v > 0:
            raise InvalidParametersError("v must be > 0")
        if not self.min_spacing >= 0:
            raise InvalidParametersError("min_spacing must be >= 0")
        lo, hi = self.depth_band
        if not (lo <= hi and self.box.zmin <= lo and hi <= self.box.zmax):
            raise InvalidParametersError("depth_band must be ordered and inside the box")


@dataclass(frozen=True)
class LawnmowerSpec:
    """Boustrophedon centered on (x, y); legs run along ``chi``."""

    x: float
    y: float
    chi: float
    L: float
    s: float
    n_legs: int
    z: float
    start_time: float = 0.0

    @property
    def path_length(self):
        return self.L * self.n_legs + self.s * (self.n_legs - 1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def legs_to_fill(L, s, constraints: OpConstraints):
    return max(1, int(math.floor((constraints.v * constraints.T_budget + s) / (L + s) + 1e-9)))


def lawnmower_vertices(spec: LawnmowerSpec):
    """Corner points of the path in traversal order, shape (2 * n_legs, 2)."""
    u = np.array([math.cos(spec.chi), math.sin(spec.chi)])
    n = np.array([-math.sin(spec.chi), math.cos(spec.chi)])
    W = (spec.n_legs - 1) * spec.s
    c = np.array([spec.x, spec.y])
    verts = []
    for i in range(spec.n_legs):
        off = -W / 2 + i * spec.s
        a, b = (-spec.L / 2, spec.L / 2) if i % 2 == 0 else (spec.L / 2, -spec.L / 2)
        verts.append(c + a * u + off * n)
        verts.append(c + b * u + off * n)
    return np.array(verts)


def check_feasible(spec: LawnmowerSpec, constraints: OpConstraints):
    """Raise InfeasibleError naming the first violated constraint."""
    if not spec.L > 0:
        raise InfeasibleError("leg_length: L must be > 0")
    if not spec.s > 0:
        raise InfeasibleError("spacing: s must be > 0")
    if spec.n_legs > 1 and spec.s < constraints.min_spacing:
        raise InfeasibleError(f"spacing: s={spec.s:.6g} m is below the minimum {constraints.min_spacing:.6g} m")
    if spec.n_legs < 1:
        raise InfeasibleError("n_legs: must be >= 1")
    if spec.path_length > constraints.v * constraints.T_budget * (1 + 1e-12):
        raise InfeasibleError(
            f"T_budget: path length {spec.path_length:.6g} m exceeds v*T_budget "
            f"{constraints.v * constraints.T_budget:.6g} m")
    lo, hi = constraints.depth_band
    if not lo <= spec.z <= hi:
        raise InfeasibleError(f"depth_band: z={spec.z:.6g} outside [{lo}, {hi}]")
    box = constraints.box
    V = lawnmower_vertices(spec)
    tol = 1e-9
    if (V[:, 0].min() < box.xmin - tol or V[:, 0].max() > box.xmax + tol
            or V[:, 1].min() < box.ymin - tol or V[:, 1].max() > box.ymax + tol):
        raise InfeasibleError("box: lawnmower leaves the operating box")


def is_feasible(spec, constraints) -> bool:
    try:
        check_feasible(spec, constraints)
    except InfeasibleError:
        return False
    return True


def _sample_polyline(verts, delta, leg_breaks=True):
    seg = np.diff(verts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    n = int(math.floor(total / delta + 1e-9))
    s = np.arange(n + 1) * delta
    s = np.union1d(s[s <= total + 1e-9], cum)
    # merge round-off duplicates at vertices
    keep = np.concatenate([[True], np.diff(s) > 1e-9])
    s = s[keep]
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = np.where(seg_len[k] > 0, (s - cum[k]) / np.where(seg_len[k] > 0, seg_len[k], 1.0), 0.0)
    pts = verts[k] + frac[:, None] * seg[k]
    return pts, s


def lawnmower_waypoints(spec: LawnmowerSpec, constraints: OpConstraints):
    """Timestamped samples every ``delta`` meters, plus every leg endpoint.

    Returns an (n, 4) array of (x, y, z, t).
    """
    check_feasible(spec, constraints)
    pts, s = _sample_polyline(lawnmower_vertices(spec), constraints.delta)
    t = spec.start_time + s / constraints.v
    return np.column_stack([pts, np.full(len(s), spec.z), t])


def path_position(spec: LawnmowerSpec, constraints: OpConstraints, t: float):
    """Vehicle position on the survey at time t; after the end it retraces the path."""
    verts = lawnmower_vertices(spec)
    seg = np.diff(verts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    s = max(0.0, (t - spec.start_time) * constraints.v)
    if total > 0:
        s = s % (2 * total)
        if s > total:
            s = 2 * total - s
    k = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1))
    frac = (s - cum[k]) / seg_len[k] if seg_len[k] > 0 else 0.0
    p = verts[k] + frac * seg[k]
    return float(p[0]), float(p[1]), float(spec.z)


def expected_inplume(grid: ForecastGrid, waypoints) -> float:
    """Sum of in-plume probabilities at the cells holding each waypoint."""
    W = np.asarray(waypoints, dtype=float).reshape(-1, 4)
    if len(W) == 0:
        raise InvalidParametersError("waypoints must be nonempty")
    idx = grid.spec.cell_index(W[:, 0], W[:, 1], W[:, 2], W[:, 3])
    flat = grid.values.ravel()
    return float(np.sum(np.where(idx >= 0, flat[np.maximum(idx, 0)], 0.0)))


def default_lawnmower(constraints: OpConstraints, z=None, multiple=30.0) -> LawnmowerSpec:
    """Centered survey used as the fixed baseline.

    Leg length is half the shorter box side, snapped down to a multiple of
    ``multiple`` (one primitive's travel) with spacing L/8 on the same lattice,
    so a vehicle stepping ``multiple`` meters lands exactly on the corners.
    The leg is shortened (on the same lattice) when the budget cannot cover it.
    """
    box = constraints.box
    cx, cy, _ = box.center
    side = min(box.xmax - box.xmin, box.ymax - box.ymin)
    lattice = 8 * multiple
    L = max(lattice, math.floor(side / 2 / lattice) * lattice)
    reach = constraints.v * constraints.T_budget
    if L > reach:
        L = math.floor(reach / lattice) * lattice
        if L < lattice:
            raise InfeasibleError(f"T_budget: v*T_budget = {reach:.6g} m is shorter than one {lattice:.6g} m leg")
    s = L / 8
    lo, hi = constraints.depth_band
    z = 0.5 * (lo + hi) if z is None else z
    spec = LawnmowerSpec(cx, cy, 0.0, L, s, legs_to_fill(L, s, constraints), z)
    # shrink leg count until the pattern fits the box
    while spec.n_legs > 1 and not is_feasible(spec, constraints):
        spec = replace(spec, n_legs=spec.n_legs - 1)
    return spec


@dataclass(frozen=True)
class OptConfig:
    n_origin: int = 8
    n_chi: int = 8
    scales: tuple = (0.1, 0.2, 0.4, 0.8)  # leg length as a fraction of the shorter box side
    max_passes: int = 50
    halvings: int = 2
    include_default: bool = True


def _score(grid, spec, constraints):
    pts, s = _sample_polyline(lawnmower_vertices(spec), constraints.delta)
    W = np.column_stack([pts, np.full(len(s), spec.z), spec.start_time + s / constraints.v])
    return expected_inplume(grid, W)


def _best_depth(grid: ForecastGrid, constraints: OpConstraints):
    _, _, zs, _ = grid.spec.centers()
    lo, hi = constraints.depth_band
    ok = (zs >= lo) & (zs <= hi)
    if not ok.any():
        return 0.5 * (lo + hi)
    mass = grid.values.sum(axis=(0, 2, 3))
    mass = np.where(ok, mass, -1.0)
    return float(zs[int(np.argmax(mass))])


def optimize_lawnmower(grid: ForecastGrid, constraints: OpConstraints, opt_cfg: OptConfig | None = None,
                       rng=None, history: list | None = None):
    """Coarse grid search then coordinate descent over lawnmower parameters.

    Returns ``(best_spec, score)``.  The search is deterministic; ``rng`` is
    accepted for interface symmetry and left untouched.  ``history``, if
    given, receives the score of every accepted coordinate-descent iterate.
    """
    opt_cfg = opt_cfg or OptConfig()
    box = constraints.box
    z0 = _best_depth(grid, constraints)
    side = min(box.xmax - box.xmin, box.ymax - box.ymin)
    candidates = []
    if opt_cfg.include_default:
        # the fixed survey, as configured and moved to the best depth, seeds the incumbent
        try:
            candidates += [default_lawnmower(constraints), default_lawnmower(constraints, z=z0)]
        except InfeasibleError:
            pass
    ox = box.xmin + (np.arange(opt_cfg.n_origin) + 0.5) * (box.xmax - box.xmin) / opt_cfg.n_origin
    oy = box.ymin + (np.arange(opt_cfg.n_origin) + 0.5) * (box.ymax - box.ymin) / opt_cfg.n_origin
    for frac in opt_cfg.scales:
        L = frac * side
        s = L / 8
        n_legs = legs_to_fill(L, s, constraints)
        for k in range(opt_cfg.n_chi):
            chi = 2 * math.pi * k / opt_cfg.n_chi
            for x in ox:
                for y in oy:
                    candidates.append(LawnmowerSpec(float(x), float(y), chi, L, s, n_legs, z0))
    best, best_score = None, -np.inf
    for c in candidates:
        if not is_feasible(c, constraints):
            continue
        sc = _score(grid, c, constraints)
        if sc > best_score:
            best, best_score = c, sc
    if best is None:
        raise InfeasibleError("no feasible lawnmower candidate under the operating constraints")

    steps = {
        "x": (box.xmax - box.xmin) / (2 * opt_cfg.n_origin),
        "y": (box.ymax - box.ymin) / (2 * opt_cfg.n_origin),
        "chi": math.pi / opt_cfg.n_chi,
        "L": best.L / 4,
        "s": best.s / 4,
        "z": grid.spec.dz,
    }
    if history is not None:
        history.append(best_score)
    for _ in range(opt_cfg.halvings + 1):
        for _ in range(opt_cfg.max_passes):
            improved = False
            for name, h in steps.items():
                for sign in (1.0, -1.0):
                    trial = _perturb(best, name, sign * h, constraints)
                    if trial is None or not is_feasible(trial, constraints):
                        continue
                    sc = _score(grid, trial, constraints)
                    if sc > best_score:
                        best, best_score = trial, sc
                        improved = True
                        if history is not None:
                            history.append(best_score)
            if not improved:
                break
        steps = {k: v / 2 for k, v in steps.items()}
    return best, best_score


def _perturb(spec: LawnmowerSpec, name, d, constraints):
    if name in ("x", "y", "z"):
        return replace(spec, **{name: getattr(spec, name) + d})
    if name == "chi":
        return replace(spec, chi=(spec.chi + d) % (2 * math.pi))
    L, s = spec.L, spec.s
    if name == "L":
        L += d
    else:
        s += d
    if L <= 0 or s <= 0:
        return None
    return replace(spec, L=L, s=s, n_legs=legs_to_fill(L, s, constraints))
