import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expedition.errors import InfeasibleError, InvalidParametersError
from expedition.particles import ParamParticleBelief, particle_init
from expedition.phumes import (ForecastGrid, GridSpec, LawnmowerSpec, OpConstraints, OptConfig, default_lawnmower,
                               expected_inplume, forecast, lawnmower_vertices, legs_to_fill, lawnmower_waypoints,
                               optimize_lawnmower, path_position)
from expedition.plume import Box, ParamPrior, tracer_fields

SMALL = GridSpec(x0=700, y0=700, z0=0, nx=12, ny=10, nz=8, nt=3, dx=50, dy=60, dz=50, dt=1800)
CONS = OpConstraints()


def grid_with(fn, spec=None):
    spec = spec or GridSpec.over_box(Box(), CONS.T_budget)
    xs, ys, zs, ts = spec.centers()
    T, Z, Y, X = np.meshgrid(ts, zs, ys, xs, indexing="ij")
    return ForecastGrid(spec, fn(X, Y, Z, T))


# --- forecast --------------------------------------------------------------

def test_forecast_matches_pointwise_oracle():
    pb = particle_init(ParamPrior(), 4, np.random.default_rng(0))
    g = forecast(pb, SMALL, 1e-3)
    xs, ys, zs, ts = SMALL.centers()
    oracle = np.zeros(SMALL.shape)
    for th, w in zip(pb.particles, pb.weights):
        for it, t in enumerate(ts):
            for iz, z in enumerate(zs):
                for iy, y in enumerate(ys):
                    for ix, x in enumerate(xs):
                        oracle[it, iz, iy, ix] += w * (float(tracer_fields(th, x, y, z, t)[1]) >= 1e-3)
    np.testing.assert_allclose(g.values, oracle, atol=1e-12)


def test_forecast_examples():
    one = particle_init(ParamPrior(), 1, np.random.default_rng(1))
    g = forecast(one, SMALL, 1e-3)
    assert set(np.unique(g.values)) <= {0.0, 1.0} and g.values.max() == 1.0
    assert forecast(one, SMALL, 2.0).values.max() == 0.0
    with pytest.raises(InvalidParametersError):
        forecast(one, SMALL, 0.0)


@settings(max_examples=10)
@given(st.integers(0, 10**6), st.floats(1e-4, 1e-2), st.floats(1.0, 10.0))
def test_forecast_monotone_and_permutation_invariant(seed, c, factor):
    rng = np.random.default_rng(seed)
    pb = particle_init(ParamPrior(), 6, rng)
    lo, hi = forecast(pb, SMALL, c), forecast(pb, SMALL, c * factor)
    assert np.all(hi.values <= lo.values)
    assert np.all((lo.values >= 0) & (lo.values <= 1))
    perm = rng.permutation(6)
    shuffled = ParamParticleBelief(tuple(pb.particles[i] for i in perm), pb.weights[perm])
    np.testing.assert_allclose(forecast(shuffled, SMALL, c).values, lo.values, atol=1e-12)


def test_grid_roundtrip(tmp_path):
    pb = particle_init(ParamPrior(), 7, np.random.default_rng(2))
    g = forecast(pb, SMALL)
    g.save(tmp_path)
    header = (tmp_path / "grid.csv").read_text().splitlines()[0]
    assert header == "ix,iy,iz,it,p"
    back = ForecastGrid.load(tmp_path)
    assert back.spec == g.spec and np.array_equal(back.values, g.values)


def test_grid_validation():
    with pytest.raises(InvalidParametersError):
        GridSpec(nx=0)
    with pytest.raises(InvalidParametersError):
        GridSpec(dt=0.0)
    with pytest.raises(InvalidParametersError):
        ForecastGrid(SMALL, np.full(SMALL.shape, 1.5))


# --- waypoints -------------------------------------------------------------

def test_single_leg_waypoints():
    spec = LawnmowerSpec(1000.0, 1000.0, 0.0, 100.0, 10.0, 1, 300.0)
    W = lawnmower_waypoints(spec, replace(CONS, delta=10.0))
    assert len(W) == 11
    np.testing.assert_allclose(W[:, 3], np.arange(0, 101, 10), atol=1e-9)
    np.testing.assert_allclose(W[:, 0], 950 + np.arange(0, 101, 10), atol=1e-9)


def test_boustrophedon_shape_and_timing():
    spec = LawnmowerSpec(1000.0, 1000.0, 0.3, 200.0, 40.0, 3, 300.0, start_time=50.0)
    W = lawnmower_waypoints(spec, replace(CONS, delta=7.0))
    V = lawnmower_vertices(spec)
    d0, d1 = V[1] - V[0], V[3] - V[2]
    assert np.dot(d0, d1) == pytest.approx(-200.0**2)  # second leg runs backwards
    for v in V:  # every leg endpoint is sampled
        assert np.min(np.hypot(W[:, 0] - v[0], W[:, 1] - v[1])) < 1e-9
    assert W[-1, 3] - W[0, 3] == pytest.approx(spec.path_length / CONS.v, abs=1e-9)
    step = np.hypot(np.diff(W[:, 0]), np.diff(W[:, 1]))
    np.testing.assert_allclose(step / np.diff(W[:, 3]), CONS.v, rtol=1e-9)
    assert np.all(step <= 7.0 + 1e-9)


def test_infeasible_names_constraint():
    ok = LawnmowerSpec(1000.0, 1000.0, 0.0, 200.0, 25.0, 4, 300.0)
    lawnmower_waypoints(ok, CONS)
    cases = {"T_budget": replace(ok, n_legs=200), "depth_band": replace(ok, z=100.0),
             "box": replace(ok, x=1950.0), "leg_length": replace(ok, L=0.0)}
    for name, spec in cases.items():
        with pytest.raises(InfeasibleError, match=name):
            lawnmower_waypoints(spec, CONS)
    with pytest.raises(InfeasibleError, match="spacing"):
        lawnmower_waypoints(ok, replace(CONS, min_spacing=30.0))
    lawnmower_waypoints(replace(ok, n_legs=1), replace(CONS, min_spacing=30.0))  # a single leg never turns


def test_optimizer_respects_min_spacing():
    cons = replace(CONS, min_spacing=40.0)
    c = np.array([1000.0, 1000.0])
    g = grid_with(lambda X, Y, Z, T: (np.hypot(X - c[0], Y - c[1]) <= 60.0).astype(float))
    spec, _ = optimize_lawnmower(g, cons)
    audit(spec, cons)
    assert spec.n_legs == 1 or spec.s >= 40.0


def test_path_position_follows_waypoints():
    spec = default_lawnmower(CONS)
    W = lawnmower_waypoints(spec, CONS)
    for x, y, z, t in W[::17]:
        assert path_position(spec, CONS, t) == pytest.approx((x, y, z), abs=1e-9)


# --- expected in-plume count -----------------------------------------------

def test_expected_inplume_examples():
    spec = default_lawnmower(CONS)
    W = lawnmower_waypoints(spec, CONS)
    ones = grid_with(lambda X, Y, Z, T: np.ones_like(X))
    zeros = grid_with(lambda X, Y, Z, T: np.zeros_like(X))
    assert expected_inplume(ones, W) == len(W)
    assert expected_inplume(zeros, W) == 0.0


def test_expected_inplume_brute_force():
    rng = np.random.default_rng(3)
    g = ForecastGrid(SMALL, rng.random(SMALL.shape))
    pts = np.array([[712.0, 705.0, 10.0, 100.0], [1299.0, 1299.0, 399.0, 5399.0], [1000.0, 1000.0, 220.0, 2000.0],
                    [650.0, 1000.0, 220.0, 2000.0], [1000.0, 1000.0, 220.0, 6000.0]])
    expected = 0.0
    for x, y, z, t in pts:
        ix, iy, iz, it = int((x - 700) // 50), int((y - 700) // 60), int(z // 50), int(t // 1800)
        if 0 <= ix < 12 and 0 <= iy < 10 and 0 <= iz < 8 and 0 <= it < 3:
            expected += g.values[it, iz, iy, ix]
    assert expected_inplume(g, pts) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(InvalidParametersError):
        expected_inplume(g, np.zeros((0, 4)))


# --- optimizer -------------------------------------------------------------

def audit(spec, cons):
    W = lawnmower_waypoints(spec, cons)
    b = cons.box
    assert spec.path_length <= cons.v * cons.T_budget * (1 + 1e-12)
    assert np.all((W[:, 0] >= b.xmin - 1e-9) & (W[:, 0] <= b.xmax + 1e-9))
    assert np.all((W[:, 1] >= b.ymin - 1e-9) & (W[:, 1] <= b.ymax + 1e-9))
    assert cons.depth_band[0] <= spec.z <= cons.depth_band[1]
    return W


def segment_distance(p, a, b):
    d = b - a
    u = np.clip(np.dot(p - a, d) / np.dot(d, d), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + u * d)))


def test_uniform_grid_score():
    g = grid_with(lambda X, Y, Z, T: np.full_like(X, 0.3))
    spec, score = optimize_lawnmower(g, CONS)
    W = audit(spec, CONS)
    assert score == pytest.approx(0.3 * len(W), rel=1e-12)


def test_blob_is_crossed():
    c = np.array([1300.0, 700.0])
    g = grid_with(lambda X, Y, Z, T: (np.hypot(X - c[0], Y - c[1]) <= 100.0).astype(float))
    hist = []
    spec, score = optimize_lawnmower(g, CONS, history=hist)
    audit(spec, CONS)
    V = lawnmower_vertices(spec)
    closest = min(segment_distance(c, V[i], V[i + 1]) for i in range(len(V) - 1))
    assert closest <= spec.s / 2
    assert score > 0 and all(b >= a for a, b in zip(hist, hist[1:]))
    assert optimize_lawnmower(g, CONS) == (spec, score)


def test_score_dominates_stage_one():
    rng = np.random.default_rng(8)
    g = grid_with(lambda X, Y, Z, T: np.clip(0.5 + 0.5 * np.sin(X / 170 + rng.random()) * np.cos(Y / 230), 0, 1))
    cfg = OptConfig(n_origin=3, n_chi=2, scales=(0.2, 0.4))
    spec, score = optimize_lawnmower(g, CONS, cfg)
    audit(spec, CONS)
    box = CONS.box
    for frac in cfg.scales:
        L = frac * 2000.0
        for k in range(cfg.n_chi):
            for x in box.xmin + (np.arange(3) + 0.5) * 2000 / 3:
                for y in box.ymin + (np.arange(3) + 0.5) * 2000 / 3:
                    cand = LawnmowerSpec(x, y, math.pi * k, L, L / 8, legs_to_fill(L, L / 8, CONS), spec.z)
                    try:
                        W = lawnmower_waypoints(cand, CONS)
                    except InfeasibleError:
                        continue
                    assert score >= expected_inplume(g, W)
    base = default_lawnmower(CONS)
    assert score >= expected_inplume(g, lawnmower_waypoints(base, CONS))


def test_optimizer_infeasible():
    tight = replace(CONS, T_budget=50.0)
    g = grid_with(lambda X, Y, Z, T: np.ones_like(X), GridSpec.over_box(Box(), 50.0))
    with pytest.raises(InfeasibleError):
        optimize_lawnmower(g, tight)


def test_default_survey_feasible():
    spec = default_lawnmower(CONS)
    audit(spec, CONS)
    assert spec.L % 30 == 0 and spec.s % 30 == 0
