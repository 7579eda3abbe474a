"""Mission configuration: one JSON document instantiating every POMDP element."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, ExpeditionError
from .gp import CHANNELS, GPHyperparams
from .phumes import DEFAULT_C_THRESH, GridSpec, OpConstraints, OptConfig
from .planner import Motion, PlannerConfig
from .plume import DEFAULT_SIGMA_SENSOR, Box, ParamPrior, VentParams


@dataclass(frozen=True)
class EnvSection:
    theta: VentParams | None = None
    prior: ParamPrior = field(default_factory=ParamPrior)
    box: Box = field(default_factory=Box)
    sigma_sensor: float = DEFAULT_SIGMA_SENSOR


@dataclass(frozen=True)
class GPSection:
    hyper: GPHyperparams = field(default_factory=GPHyperparams)
    capacity: int = 1500
    channel: str = "reactive"


@dataclass(frozen=True)
class PhumesSection:
    grid: GridSpec | None = None  # None: default grid over the box and mission
    c_thresh: float = DEFAULT_C_THRESH
    K: int = 500
    delta: float = 30.0
    opt: OptConfig = field(default_factory=OptConfig)


@dataclass(frozen=True)
class MissionSection:
    T_budget: float = 4 * 3600.0
    v: float = 1.0
    duration: float = 30.0
    omega_max: float = math.pi / 60
    d_step: float = 10.0
    depth_band: tuple = (250.0, 350.0)
    depth: float = 300.0
    start: tuple | None = None  # (x, y, z, heading); None: start of the default lawnmower


@dataclass(frozen=True)
class MissionConfig:
    env: EnvSection = field(default_factory=EnvSection)
    gp: GPSection = field(default_factory=GPSection)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    phumes: PhumesSection = field(default_factory=PhumesSection)
    mission: MissionSection = field(default_factory=MissionSection)
    seed: int = 0

    @property
    def motion(self) -> Motion:
        m = self.mission
        return Motion(m.v, m.duration, m.omega_max, m.d_step)

    @property
    def vehicle_box(self) -> Box:
        """Operating box with z restricted to the mission depth band."""
        b = self.env.box
        lo, hi = self.mission.depth_band
        return Box(b.xmin, b.xmax, b.ymin, b.ymax, lo, hi)

    @property
    def constraints(self) -> OpConstraints:
        m = self.mission
        # legs closer than one turn diameter cannot be joined by a U-turn
        return OpConstraints(self.env.box, m.T_budget, m.v, self.phumes.delta, tuple(m.depth_band),
                             min_spacing=2.0 * m.v / m.omega_max)

    @property
    def grid_spec(self) -> GridSpec:
        if self.phumes.grid is not None:
            return self.phumes.grid
        return GridSpec.over_box(self.env.box, self.mission.T_budget)

    def to_dict(self):
        d = {
            "seed": self.seed,
            "env": {
                "theta": None if self.env.theta is None else self.env.theta.to_dict(),
                "prior": self.env.prior.to_dict(),
                "box": asdict(self.env.box),
                "sigma_sensor": self.env.sigma_sensor,
            },
            "gp": {"hyper": asdict(self.gp.hyper), "capacity": self.gp.capacity, "channel": self.gp.channel},
            "planner": self.planner.to_dict(),
            "phumes": {
                "grid": None if self.phumes.grid is None else asdict(self.phumes.grid),
                "c_thresh": self.phumes.c_thresh,
                "K": self.phumes.K,
                "delta": self.phumes.delta,
                "opt": asdict(self.phumes.opt),
            },
            "mission": asdict(self.mission),
        }
        return d

    @classmethod
    def from_dict(cls, d) -> "MissionConfig":
        return _parse(d)

    @classmethod
    def load(cls, path) -> "MissionConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
        return _parse(raw)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _build(path, ctor, kwargs):
    """Call ctor(**kwargs), re-raising validation failures as ConfigError(path)."""
    if not isinstance(kwargs, dict):
        raise ConfigError(path, "expected an object")
    allowed = {f.name for f in fields(ctor)} if hasattr(ctor, "__dataclass_fields__") else None
    if allowed is not None:
        unknown = set(kwargs) - allowed
        if unknown:
            raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")
    try:
        return ctor(**kwargs)
    except ExpeditionError as exc:
        raise ConfigError(path, str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse(d) -> MissionConfig:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "expected an object")
    unknown = set(d) - {"env", "gp", "planner", "phumes", "mission", "seed"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")

    env_d = dict(d.get("env", {}))
    theta = None
    if env_d.get("theta") is not None:
        td = dict(env_d["theta"])
        tide = _build("env.theta.tide", _tide_ctor(), td.pop("tide", {}))
        theta = _build("env.theta", VentParams, {**td, "tide": tide})
    try:
        prior = ParamPrior.from_dict(env_d.get("prior", {}))
    except ExpeditionError as exc:
        raise ConfigError("env.prior", str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError("env.prior", str(exc)) from exc
    box = _build("env.box", Box, env_d.get("box", {}))
    sigma = env_d.get("sigma_sensor", DEFAULT_SIGMA_SENSOR)
    if not (isinstance(sigma, (int, float)) and sigma >= 0):
        raise ConfigError("env.sigma_sensor", "must be a number >= 0")
    extra = set(env_d) - {"theta", "prior", "box", "sigma_sensor"}
    if extra:
        raise ConfigError(f"env.{sorted(extra)[0]}", "unknown field")
    env = EnvSection(theta, prior, box, float(sigma))

    gp_d = dict(d.get("gp", {}))
    hyper = _build("gp.hyper", GPHyperparams, gp_d.get("hyper", {}))
    capacity = gp_d.get("capacity", 1500)
    if not (isinstance(capacity, int) and capacity >= 1):
        raise ConfigError("gp.capacity", "must be an integer >= 1")
    channel = gp_d.get("channel", "reactive")
    if channel not in CHANNELS:
        raise ConfigError("gp.channel", f"must be one of {CHANNELS}")
    gp = GPSection(hyper, capacity, channel)

    planner = _build("planner", PlannerConfig, d.get("planner", {}))

    ph_d = dict(d.get("phumes", {}))
    grid = None if ph_d.get("grid") is None else _build("phumes.grid", GridSpec, ph_d["grid"])
    opt_d = dict(ph_d.get("opt", {}))
    if "scales" in opt_d:
        opt_d["scales"] = tuple(opt_d["scales"])
    opt = _build("phumes.opt", OptConfig, opt_d)
    c_thresh = ph_d.get("c_thresh", DEFAULT_C_THRESH)
    if not (isinstance(c_thresh, (int, float)) and c_thresh > 0):
        raise ConfigError("phumes.c_thresh", "must be > 0")
    K = ph_d.get("K", 500)
    if not (isinstance(K, int) and K >= 1):
        raise ConfigError("phumes.K", "must be an integer >= 1")
    delta = ph_d.get("delta", 30.0)
    if not (isinstance(delta, (int, float)) and delta > 0):
        raise ConfigError("phumes.delta", "must be > 0")
    phumes = PhumesSection(grid, float(c_thresh), K, float(delta), opt)

    m_d = dict(d.get("mission", {}))
    for key in ("depth_band", "start"):
        if m_d.get(key) is not None:
            m_d[key] = tuple(float(v) for v in m_d[key])
    mission = _build("mission", MissionSection, m_d)
    _check_mission(mission, box)

    seed = d.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "must be a nonnegative integer")
    return MissionConfig(env, gp, planner, phumes, mission, seed)


def _tide_ctor():
    from .plume import TideParams

    return TideParams


def _check_mission(m: MissionSection, box: Box):
    for name in ("T_budget", "v", "duration"):
        if not getattr(m, name) > 0:
            raise ConfigError(f"mission.{name}", "must be > 0")
    if m.omega_max <= 0:
        raise ConfigError("mission.omega_max", "must be > 0")
    if m.d_step < 0:
        raise ConfigError("mission.d_step", "must be >= 0")
    if len(m.depth_band) != 2:
        raise ConfigError("mission.depth_band", "must be [low, high]")
    lo, hi = m.depth_band
    if not (box.zmin <= lo <= hi <= box.zmax):
        raise ConfigError("mission.depth_band", "must be ordered and inside the box")
    if not lo <= m.depth <= hi:
        raise ConfigError("mission.depth", "must lie inside depth_band")
    if m.start is not None:
        if len(m.start) != 4:
            raise ConfigError("mission.start", "must be [x, y, z, heading]")
        x, y, z, _ = m.start
        if not (box.xmin <= x <= box.xmax and box.ymin <= y <= box.ymax and lo <= z <= hi):
            raise ConfigError("mission.start", "must lie inside the box and depth band")
