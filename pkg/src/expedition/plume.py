"""Ground-truth hydrothermal plume simulator and vehicle kinematics.

The plume is a Morton-Taylor-Turner pure plume (linear spreading, w ~ z^-1/3)
rising to a Briggs-style terminal height in a stratified ocean.  Its stem is
bent by a frozen tidal crossflow; fluid reaching the neutrally-buoyant height
is shed as a train of advected, diffusing Gaussian puffs that make up the
layer.  Two tracers are carried: a conserved one (OBS/turbidity-like) and a
reactive one (dORP-like) that decays with puff age.

Coordinates: x east, y north, z height above the seafloor, all in meters.
Angles (heading, crossflow azimuth) are measured counter-clockwise from +x.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import InvalidParametersError, InvalidPriorError, OutOfRangeError

PUFF_INTERVAL = 600.0
LAYER_MEMORY = 4 * 3600.0
Z_NB_FRACTION = 0.8
SIGMA_Z_FRACTION = 0.1

DEFAULT_V = 1.0
DEFAULT_DURATION = 30.0
DEFAULT_OMEGA_MAX = math.pi / 60
DEFAULT_D_STEP = 10.0
DEFAULT_SIGMA_SENSOR = 0.01

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TideParams:
    u_mean: float = 0.02
    u_amp: float = 0.08
    period: float = 12.42 * 3600.0
    phase: float = 0.0

    def __post_init__(self):
        if not self.period > 0:
            raise InvalidParametersError("tide.period must be > 0")
        if not self.u_amp >= 0:
            raise InvalidParametersError("tide.u_amp must be >= 0")


@dataclass(frozen=True)
class VentParams:
    """Hidden environment parameters defining one world."""

    vent_x: float = 1000.0
    vent_y: float = 1000.0
    B0: float = 0.1
    N: float = 1e-3
    alpha: float = 0.1
    tide: TideParams = field(default_factory=TideParams)
    kappa_h: float = 1.0
    t_react: float = 3600.0
    z_src: float = 10.0
    psi: float = 0.0

    def __post_init__(self):
        for name in ("vent_x", "vent_y", "B0", "N", "alpha", "kappa_h", "t_react", "z_src", "psi"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParametersError(f"{name} must be finite")
        if not self.B0 > 0:
            raise InvalidParametersError("B0 must be > 0")
        if not self.N > 0:
            raise InvalidParametersError("N must be > 0")
        if not 0 < self.alpha < 0.3:
            raise InvalidParametersError("alpha must lie in (0, 0.3)")
        if not self.kappa_h >= 0:
            raise InvalidParametersError("kappa_h must be >= 0")
        if not self.t_react > 0:
            raise InvalidParametersError("t_react must be > 0")
        z_max = 3.76 * self.B0**0.25 * self.N**-0.75
        if not 0 < self.z_src < z_max:
            raise InvalidParametersError(f"z_src must lie in (0, z_max={z_max:.6g})")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        tide = TideParams(**d.pop("tide", {}))
        return cls(tide=tide, **d)


@dataclass(frozen=True)
class PlumeScales:
    z_max: float
    z_nb: float
    c_w: float


def derived_scales(theta: VentParams) -> PlumeScales:
    """Terminal rise height, layer height and the MTT velocity scale."""
    z_max = 3.76 * theta.B0**0.25 * theta.N**-0.75
    c_w = (5.0 / (6.0 * theta.alpha)) * (0.9 * theta.alpha * theta.B0) ** (1.0 / 3.0)
    if not (math.isfinite(z_max) and math.isfinite(c_w)):
        raise InvalidParametersError("derived plume scales are not finite")
    return PlumeScales(z_max=z_max, z_nb=Z_NB_FRACTION * z_max, c_w=c_w)


def stem_radius(theta: VentParams, z):
    """MTT linear spreading radius (6*alpha/5)*z."""
    return 1.2 * theta.alpha * z


def rise_time(theta: VentParams, z):
    """Time for stem fluid to rise from the source to height ``z``."""
    scales = derived_scales(theta)
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0) or np.any(z_arr > scales.z_max):
        raise OutOfRangeError(f"z must lie in [0, z_max={scales.z_max:.6g}]")
    out = 0.75 * z_arr ** (4.0 / 3.0) / scales.c_w
    return float(out) if out.ndim == 0 else out


def _rise_time(z, c_w):
    return 0.75 * z ** (4.0 / 3.0) / c_w


def crossflow_speed(tide: TideParams, t):
    """Signed tidal current magnitude; negative values reverse the direction."""
    return tide.u_mean + tide.u_amp * np.sin(TWO_PI * np.asarray(t, dtype=float) / tide.period + tide.phase)


def crossflow(tide: TideParams, t, psi: float = 0.0):
    """(u_east, u_north) of the tidal current at time ``t`` along azimuth ``psi``."""
    u = crossflow_speed(tide, t)
    return u * math.cos(psi), u * math.sin(psi)


def tide_displacement(tide: TideParams, t0, t1):
    """Signed along-azimuth distance a water parcel travels between t0 and t1."""
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    w = TWO_PI / tide.period
    return tide.u_mean * (t1 - t0) - (tide.u_amp / w) * (
        np.cos(w * t1 + tide.phase) - np.cos(w * t0 + tide.phase)
    )


@dataclass(frozen=True)
class TracerPair:
    reactive: float
    conserved: float


def _stem(theta, scales, x, y, z, t):
    zc = np.clip(z, theta.z_src, scales.z_max)
    b = 1.2 * theta.alpha * zc
    tr = _rise_time(zc, scales.c_w)
    shift = crossflow_speed(theta.tide, t - tr) * tr
    cx = theta.vent_x + shift * math.cos(theta.psi)
    cy = theta.vent_y + shift * math.sin(theta.psi)
    r2 = (x - cx) ** 2 + (y - cy) ** 2
    c = (theta.z_src / zc) ** (5.0 / 3.0) * np.exp(-r2 / (b * b))
    return np.where(z <= scales.z_max, c, 0.0)


def source_flux(theta: VentParams, scales: PlumeScales | None = None) -> float:
    """Normalized tracer flux pi*b^2*w*C, evaluated at the source height."""
    scales = scales or derived_scales(theta)
    b = 1.2 * theta.alpha * theta.z_src
    w = scales.c_w * theta.z_src ** (-1.0 / 3.0)
    return math.pi * b * b * w


def _puff_slots():
    return int(math.ceil(LAYER_MEMORY / PUFF_INTERVAL)) + 1


def _puff_state(theta, scales, t):
    """Puff centers, horizontal variances and masses for release slots at time(s) t.

    Returns arrays with a trailing puff axis.  Release times sit on the lattice
    k * PUFF_INTERVAL; mass ramps in over the first interval and out over the
    last so the field stays continuous in time.
    """
    t = np.asarray(t, dtype=float)[..., None]
    j = np.arange(_puff_slots())
    t_rel = PUFF_INTERVAL * (np.floor(t / PUFF_INTERVAL) - j)
    age = t - t_rel
    ramp = np.clip(age / PUFF_INTERVAL, 0.0, 1.0) * np.clip((LAYER_MEMORY - age) / PUFF_INTERVAL, 0.0, 1.0)
    tr_nb = _rise_time(scales.z_nb, scales.c_w)
    along = crossflow_speed(theta.tide, t_rel - tr_nb) * tr_nb + tide_displacement(theta.tide, t_rel, t)
    cx = theta.vent_x + along * math.cos(theta.psi)
    cy = theta.vent_y + along * math.sin(theta.psi)
    b_nb = 1.2 * theta.alpha * scales.z_nb
    var_h = b_nb * b_nb + 2.0 * theta.kappa_h * age
    mass = source_flux(theta, scales) * PUFF_INTERVAL * ramp
    return cx, cy, var_h, mass, age


def _layer_horizontal(theta, scales, x, y, t):
    """Layer column density per puff (before the vertical factor), trailing puff axis."""
    cx, cy, var_h, mass, age = _puff_state(theta, scales, t)
    r2 = (np.asarray(x)[..., None] - cx) ** 2 + (np.asarray(y)[..., None] - cy) ** 2
    h = mass / (TWO_PI * var_h) * np.exp(-r2 / (2.0 * var_h))
    return h, np.exp(-age / theta.t_react)


def _layer_vertical(scales, z):
    sz = SIGMA_Z_FRACTION * scales.z_max
    return np.exp(-((z - scales.z_nb) ** 2) / (2.0 * sz * sz)) / (math.sqrt(TWO_PI) * sz)


def tracer_fields(theta: VentParams, x, y, z, t):
    """Vectorized (reactive, conserved) concentrations; inputs broadcast together."""
    scales = derived_scales(theta)
    x, y, z, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z, t)))
    stem = _stem(theta, scales, x, y, z, t)
    h, decay = _layer_horizontal(theta, scales, x, y, t)
    vert = _layer_vertical(scales, z)
    conserved = stem + vert * h.sum(axis=-1)
    reactive = stem + vert * (h * decay).sum(axis=-1)
    return reactive, conserved


def concentration(theta: VentParams, p, t) -> TracerPair:
    """Noiseless tracer pair at point ``p = (x, y, z)`` and time ``t``."""
    if t < 0:
        raise OutOfRangeError("t must be >= 0")
    reactive, conserved = tracer_fields(theta, p[0], p[1], p[2], t)
    return TracerPair(reactive=float(reactive), conserved=float(conserved))


def conserved_on_grid(theta: VentParams, xs, ys, zs, t):
    """Conserved tracer on the tensor grid xs x ys x zs at one time.

    Returns an array indexed [iz, iy, ix].  Stem cross-sections and layer puffs
    are isotropic Gaussians, so each factors into x and y terms; the layer also
    factors vertically.  Cost is O(nx*ny*nz) with no per-cell exponentials.
    """
    scales = derived_scales(theta)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    zs = np.asarray(zs, dtype=float)

    cx, cy, var_h, mass, _ = _puff_state(theta, scales, t)
    ex = np.exp(-((xs[None, :] - cx[:, None]) ** 2) / (2.0 * var_h[:, None]))
    ey = np.exp(-((ys[None, :] - cy[:, None]) ** 2) / (2.0 * var_h[:, None]))
    h = (ey * (mass / (TWO_PI * var_h))[:, None]).T @ ex
    layer = _layer_vertical(scales, zs)[:, None, None] * h[None]

    zc = np.clip(zs, theta.z_src, scales.z_max)
    b2 = (1.2 * theta.alpha * zc) ** 2
    tr = _rise_time(zc, scales.c_w)
    shift = crossflow_speed(theta.tide, t - tr) * tr
    sx = theta.vent_x + shift * math.cos(theta.psi)
    sy = theta.vent_y + shift * math.sin(theta.psi)
    amp = np.where(zs <= scales.z_max, (theta.z_src / zc) ** (5.0 / 3.0), 0.0)
    gx = np.exp(-((xs[None, :] - sx[:, None]) ** 2) / b2[:, None])
    gy = np.exp(-((ys[None, :] - sy[:, None]) ** 2) / b2[:, None]) * amp[:, None]
    return layer + gy[:, :, None] * gx[:, None, :]


@dataclass(frozen=True)
class Box:
    xmin: float = 0.0
    xmax: float = 2000.0
    ymin: float = 0.0
    ymax: float = 2000.0
    zmin: float = 0.0
    zmax: float = 400.0

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax and self.zmin < self.zmax):
            raise InvalidParametersError("box bounds must satisfy min < max on every axis")

    def contains(self, x, y, z, tol=1e-9):
        return (
            self.xmin - tol <= x <= self.xmax + tol
            and self.ymin - tol <= y <= self.ymax + tol
            and self.zmin - tol <= z <= self.zmax + tol
        )

    @property
    def center(self):
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax), 0.5 * (self.zmin + self.zmax))


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    heading: float = 0.0


@dataclass(frozen=True)
class MotionPrimitive:
    """Requested absolute heading, vertical change (positive up) and duration."""

    heading: float
    delta_depth: float = 0.0
    duration: float = DEFAULT_DURATION

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidParametersError("duration must be > 0")


def wrap_angle(a):
    """Wrap to [0, 2*pi)."""
    return a % TWO_PI


def heading_change(current, requested):
    """Signed shortest rotation from current to requested, in (-pi, pi]."""
    d = (requested - current) % TWO_PI
    return d - TWO_PI if d > math.pi else d


def step(pose: Pose, a: MotionPrimitive, box: Box, v: float = DEFAULT_V,
         omega_max: float = DEFAULT_OMEGA_MAX):
    """Deterministic vehicle transition.  Returns ``(new_pose, clipped)``."""
    limit = omega_max * a.duration
    dh = min(max(heading_change(pose.heading, a.heading), -limit), limit)
    heading = wrap_angle(pose.heading + dh)
    dist = v * a.duration
    x = pose.x + dist * math.cos(heading)
    y = pose.y + dist * math.sin(heading)
    z = pose.z + a.delta_depth
    cx = min(max(x, box.xmin), box.xmax)
    cy = min(max(y, box.ymin), box.ymax)
    cz = min(max(z, box.zmin), box.zmax)
    clipped = (cx, cy, cz) != (x, y, z)
    return Pose(cx, cy, cz, heading), clipped


@dataclass(frozen=True)
class Observation:
    x: float
    y: float
    z: float
    t: float
    reactive: float
    turbidity: float

    def value(self, channel: str) -> float:
        if channel == "reactive":
            return self.reactive
        if channel == "turbidity":
            return self.turbidity
        raise ValueError(f"unknown channel {channel!r}")


def observe(theta: VentParams, pose: Pose, t: float, sigma_sensor: float, rng) -> Observation:
    """Noisy two-channel point reading at the vehicle position."""
    if sigma_sensor < 0:
        raise InvalidParametersError("sigma_sensor must be >= 0")
    c = concentration(theta, (pose.x, pose.y, pose.z), t)
    noise = rng.normal(0.0, 1.0, size=2) * sigma_sensor
    return Observation(pose.x, pose.y, pose.z, t, c.reactive + noise[0], c.conserved + noise[1])


# Sampling order is fixed so a given seed always maps to the same world.
_PRIOR_FIELDS = ("vent_x", "vent_y", "B0", "N", "alpha", "kappa_h", "t_react", "z_src", "psi")
_TIDE_FIELDS = ("u_mean", "u_amp", "period", "phase")


def _default_bounds():
    return {
        "vent_x": (700.0, 1300.0),
        "vent_y": (700.0, 1300.0),
        "B0": (0.05, 0.15),  # keeps z_nb inside the default 250-350 m survey band
        "N": (1e-3, 1e-3),
        "alpha": (0.1, 0.1),
        "kappa_h": (1.0, 1.0),
        "t_react": (3600.0, 3600.0),
        "z_src": (10.0, 10.0),
        "psi": (0.0, TWO_PI),
        "tide.u_mean": (0.02, 0.02),
        "tide.u_amp": (0.08, 0.08),
        "tide.period": (12.42 * 3600.0, 12.42 * 3600.0),
        "tide.phase": (0.0, TWO_PI),
    }


@dataclass(frozen=True)
class ParamPrior:
    """Independent uniform bounds per VentParams field (tide fields as ``tide.<name>``)."""

    bounds: dict = field(default_factory=_default_bounds)

    def __post_init__(self):
        expected = set(_PRIOR_FIELDS) | {f"tide.{n}" for n in _TIDE_FIELDS}
        missing = expected - set(self.bounds)
        extra = set(self.bounds) - expected
        if missing or extra:
            raise InvalidPriorError(f"prior fields mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, (lo, hi) in self.bounds.items():
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise InvalidPriorError(f"{name}: bounds must be finite")
            if lo > hi:
                raise InvalidPriorError(f"{name}: low {lo} > high {hi}")

    def midpoint(self) -> VentParams:
        mid = {k: 0.5 * (lo + hi) for k, (lo, hi) in self.bounds.items()}
        return _assemble(mid)

    def to_dict(self):
        out = {k: list(v) for k, v in self.bounds.items() if not k.startswith("tide.")}
        out["tide"] = {n: list(self.bounds[f"tide.{n}"]) for n in _TIDE_FIELDS}
        return out

    @classmethod
    def from_dict(cls, d):
        bounds = {k: tuple(float(x) for x in v) for k, v in d.items() if k != "tide"}
        for n, v in d.get("tide", {}).items():
            bounds[f"tide.{n}"] = tuple(float(x) for x in v)
        merged = _default_bounds()
        merged.update(bounds)
        return cls(bounds=merged)

    def with_bounds(self, **kw):
        b = dict(self.bounds)
        for k, v in kw.items():
            b[k.replace("__", ".")] = tuple(v)
        return replace(self, bounds=b)


def _assemble(values) -> VentParams:
    tide = TideParams(**{n: values[f"tide.{n}"] for n in _TIDE_FIELDS})
    return VentParams(tide=tide, **{n: values[n] for n in _PRIOR_FIELDS})


def sample_params(prior: ParamPrior, rng) -> VentParams:
    """Draw one world from the prior.  Every field consumes one uniform variate."""
    values = {}
    for name in _PRIOR_FIELDS + tuple(f"tide.{n}" for n in _TIDE_FIELDS):
        lo, hi = prior.bounds[name]
        u = rng.random()
        values[name] = lo if hi == lo else lo + (hi - lo) * u
    return _assemble(values)


def vent_param_names():
    return [f.name for f in fields(VentParams)]
