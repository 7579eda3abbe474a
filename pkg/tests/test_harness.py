import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expedition.bench import cell_seeds, derive_seed, paired_wilcoxon, run_bench, splitmix64
from expedition.cli import main, parse_seeds
from expedition.config import MissionConfig
from expedition.episode import (EpisodeTrace, TraceRow, eval_grid, inplume_fraction, maxseek_regret, run_episode,
                                start_pose, survey)
from expedition.errors import ConfigError, InfeasibleError, InvalidArgumentError
from expedition.gp import GPBelief, gp_update
from expedition.phumes import ForecastGrid, GridSpec, lawnmower_waypoints
from expedition.plume import Box, Observation, TideParams, VentParams, tracer_fields
from expedition.render import render_svg

SHORT = {"mission": {"T_budget": 300.0}, "planner": {"budget": 30}}


def short_cfg(**extra):
    d = json.loads(json.dumps(SHORT))
    for k, v in extra.items():
        d.setdefault(k, {}).update(v) if isinstance(v, dict) else d.__setitem__(k, v)
    return MissionConfig.from_dict(d)


def row(k, x, y, z, t):
    return TraceRow(k, t, x, y, z, 0.0, 0.0, 0.0, False, 0.0, 0.0, 0.0, 0.0)


# --- config ----------------------------------------------------------------

def test_config_roundtrip_and_defaults():
    cfg = MissionConfig()
    assert MissionConfig.from_dict(cfg.to_dict()) == cfg
    assert MissionConfig.from_dict({}) == cfg
    assert MissionConfig.from_dict(json.loads(cfg.dumps())) == cfg


@pytest.mark.parametrize("doc, field", [
    ({"bogus": {}}, "bogus"),
    ({"planner": {"budget": 0}}, "planner"),
    ({"planner": {"nope": 1}}, "planner.nope"),
    ({"gp": {"hyper": {"ell_s": -1}}}, "gp.hyper"),
    ({"gp": {"channel": "oxygen"}}, "gp.channel"),
    ({"env": {"prior": {"vent_x": [1300, 700]}}}, "env.prior"),
    ({"env": {"theta": {"B0": -1.0}}}, "env.theta"),
    ({"env": {"theta": {"tide": {"period": 0}}}}, "env.theta.tide"),
    ({"env": {"box": {"xmin": 10, "xmax": 0}}}, "env.box"),
    ({"env": {"sigma_sensor": -0.1}}, "env.sigma_sensor"),
    ({"phumes": {"c_thresh": 0}}, "phumes.c_thresh"),
    ({"phumes": {"grid": {"nx": 0}}}, "phumes.grid"),
    ({"mission": {"T_budget": -5}}, "mission.T_budget"),
    ({"mission": {"depth": 100}}, "mission.depth"),
    ({"mission": {"depth_band": [350, 250]}}, "mission.depth_band"),
    ({"mission": {"start": [5000, 0, 300, 0]}}, "mission.start"),
    ({"seed": -1}, "seed"),
])
def test_config_errors_name_the_field(doc, field):
    with pytest.raises(ConfigError) as exc:
        MissionConfig.from_dict(doc)
    assert exc.value.field == field


def test_config_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        MissionConfig.load(p)


# --- episode ---------------------------------------------------------------

def test_empty_mission_has_one_row():
    cfg = short_cfg(mission={"T_budget": 20.0})
    trace, summary = run_episode(cfg, "mcts", 0)
    assert len(trace) == 1 and summary.metrics["steps"] == 0
    assert summary.status == "ok" and summary.metrics["maxseek_regret"] >= 0


@pytest.mark.parametrize("policy", ["mcts", "greedy_myopic", "random", "lawnmower_fixed"])
def test_episode_deterministic_and_well_formed(policy):
    cfg = short_cfg()
    a = run_episode(cfg, policy, 4)
    b = run_episode(cfg, policy, 4)
    assert a[0].to_csv() == b[0].to_csv()
    assert a[1].to_json() == b[1].to_json()
    t = a[0].times()
    assert len(t) == 11
    np.testing.assert_array_equal(np.diff(t), np.full(10, 30.0))
    assert EpisodeTrace.from_csv(a[0].to_csv()).to_csv() == a[0].to_csv()


def test_metrics_recomputable_from_persisted_outputs():
    cfg = short_cfg()
    trace, summary = run_episode(cfg, "random", 2)
    back = EpisodeTrace.from_csv(trace.to_csv())
    theta = VentParams.from_dict(summary.theta)
    assert inplume_fraction(back, theta, cfg.phumes.c_thresh) == summary.metrics["inplume_fraction"]
    b = GPBelief(cfg.gp.hyper, cfg.gp.channel, cfg.gp.capacity)
    for r in back.rows:
        b = gp_update(b, Observation(r.x, r.y, r.z, r.t, r.reactive, r.turbidity))
    grid = eval_grid(cfg.env.box, summary.metrics["eval_depth"])
    assert maxseek_regret(b, theta, grid, summary.metrics["t_eval"]) == pytest.approx(
        summary.metrics["maxseek_regret"], abs=1e-12)
    rewards = [r.reward for r in back.rows[1:]]
    assert back.rows[-1].cum_reward == pytest.approx(summary.metrics["cumulative_reward"], rel=1e-12)
    assert sum(0.95**i * r for i, r in enumerate(rewards)) == pytest.approx(back.rows[-1].cum_reward, rel=1e-12)


def test_lawnmower_trace_follows_waypoints():
    cfg = MissionConfig.from_dict({"mission": {"T_budget": 3000.0}})
    trace, _ = run_episode(cfg, "lawnmower_fixed", 0)
    spec = survey(cfg)
    W = lawnmower_waypoints(spec, cfg.constraints)
    P = trace.positions()
    assert len(W) < len(P)  # the survey ends before the budget does
    np.testing.assert_allclose(P[:len(W)], W[:, :3], atol=1e-6)
    np.testing.assert_allclose(trace.times()[:len(W)], W[:, 3], atol=1e-9)
    # afterwards it heads back along the path, as far as the turn rate allows
    b = cfg.vehicle_box
    assert all(b.contains(*p) for p in P[len(W):])


def test_short_mission_survey_fits_budget():
    cfg = MissionConfig.from_dict({"mission": {"T_budget": 300.0}})
    W = lawnmower_waypoints(survey(cfg), cfg.constraints)
    assert W[-1, 3] <= 300.0
    trace, _ = run_episode(MissionConfig.from_dict({"mission": {"T_budget": 200.0}}), "random", 0)
    assert len(trace) == 7
    with pytest.raises(InfeasibleError):
        survey(MissionConfig.from_dict({"mission": {"T_budget": 200.0}}))


def test_start_pose_rules():
    cfg = MissionConfig()
    assert start_pose(cfg, "mcts") == start_pose(cfg, "random")
    p = start_pose(cfg, "mcts")
    assert (p.x, p.y, p.z) == (1000.0, 1000.0, 300.0)
    pinned = MissionConfig.from_dict({"mission": {"start": [10, 20, 300, 1.0]}})
    assert start_pose(pinned, "lawnmower_fixed").x == 10.0


# --- metrics ---------------------------------------------------------------

THETA = VentParams(tide=TideParams(u_mean=0.0, u_amp=0.0))


def test_regret_examples():
    grid = eval_grid(Box(), 290.0, n=16)
    f = tracer_fields(THETA, grid[:, 0], grid[:, 1], grid[:, 2], 600.0)[0]
    zero = maxseek_regret(GPBelief(), THETA, grid, 600.0)
    assert zero == pytest.approx(f.max() - f[0], abs=1e-15)
    i = int(np.argmax(f))
    b = gp_update(GPBelief(), Observation(*grid[i], 600.0, 1.0, 1.0))
    assert maxseek_regret(b, THETA, grid, 600.0) == 0.0


@settings(max_examples=20)
@given(st.integers(0, 2**31))
def test_regret_nonnegative(seed):
    rng = np.random.default_rng(seed)
    b = GPBelief()
    for _ in range(5):
        b = gp_update(b, Observation(*rng.uniform(0, 2000, 2), 290.0, 600.0, rng.normal(), 0.0))
    assert maxseek_regret(b, THETA, eval_grid(Box(), 290.0, n=16), 600.0) >= 0.0


def test_inplume_examples():
    core = EpisodeTrace([row(k, THETA.vent_x, THETA.vent_y, 100.0, 30.0 * k) for k in range(5)])
    assert inplume_fraction(core, THETA, 1e-3) == 1.0
    far = EpisodeTrace([row(k, 0.0, 0.0, 300.0, 30.0 * k) for k in range(5)])
    assert inplume_fraction(far, THETA, 1e-3) == 0.0
    rng = np.random.default_rng(1)
    rows = [row(k, *rng.uniform(900, 1100, 2), rng.uniform(50, 350), 600.0 + 30 * k) for k in range(10)]
    hand = sum(float(tracer_fields(THETA, r.x, r.y, r.z, r.t)[1]) >= 1e-3 for r in rows)
    assert 0 < hand < 10
    assert inplume_fraction(EpisodeTrace(rows), THETA, 1e-3) == hand / 10


# --- bench -----------------------------------------------------------------

def test_splitmix_reference_values():
    # published outputs of the splitmix64 generator seeded with 0
    state, out = 0, []
    for _ in range(3):
        out.append(splitmix64(state))
        state = (state + 0x9E3779B97F4A7C15) & (2**64 - 1)
    assert out == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert cell_seeds(0, "mcts", 3)[1] == cell_seeds(0, "random", 3)[1]


def test_single_cell_matches_episode():
    cfg = short_cfg()
    rep = run_bench(cfg, ["random"], [5], threads=0)
    pseed, wseed = cell_seeds(cfg.seed, "random", 5)
    _, s = run_episode(cfg, "random", pseed, world_seed=wseed)
    c = rep.cell("random", 5)
    assert c["maxseek_regret"] == s.metrics["maxseek_regret"]
    assert c["inplume_fraction"] == s.metrics["inplume_fraction"]


def test_self_comparison_is_zero():
    rep = run_bench(short_cfg(), ["random", "random"], [0, 1, 2], threads=0)
    comp = rep.comparisons[0]
    assert comp["mean_difference"] == 0.0 and comp["n_nonzero"] == 0 and comp["statistic"] == 0.0


def test_thread_count_does_not_change_report():
    cfg = short_cfg()
    a = run_bench(cfg, ["random", "greedy_myopic"], [0, 1], threads=0)
    b = run_bench(cfg, ["random", "greedy_myopic"], [0, 1], threads=2)
    assert a.to_dict() == b.to_dict() and a.to_csv() == b.to_csv()


def test_failed_cells_are_recorded(monkeypatch):
    import expedition.bench as bench

    def boom(*args, **kwargs):
        raise RuntimeError("kaput")

    monkeypatch.setattr(bench, "run_episode", boom)
    rep = run_bench(short_cfg(), ["random"], [0, 1], threads=0)
    assert [c["status"] for c in rep.cells] == ["failed", "failed"]
    assert "kaput" in rep.cells[0]["reason"]


def textbook_wilcoxon(d):
    """W+ and its exact lower-tail probability, by rank sums and subset-count DP."""
    d = np.asarray([x for x in d if x != 0.0])
    order = np.argsort(np.abs(d))
    ranks = np.empty(len(d))
    ranks[order] = np.arange(1, len(d) + 1)
    w_plus = ranks[d > 0].sum()
    n = len(d)
    counts = np.zeros(n * (n + 1) // 2 + 1)
    counts[0] = 1.0
    for r in range(1, n + 1):  # number of sign patterns reaching each rank sum
        counts[r:] = counts[r:] + counts[:-r].copy()
    p_less = counts[: int(w_plus) + 1].sum() / 2.0**n
    return w_plus, p_less


def test_wilcoxon_matches_textbook_oracle():
    rng = np.random.default_rng(12)
    a = rng.normal(0.0, 1.0, 30)
    b = a + rng.normal(0.3, 1.0, 30)
    res = paired_wilcoxon(a, b)
    w, p = textbook_wilcoxon(a - b)
    assert res["statistic"] == w
    assert res["p_less"] == pytest.approx(p, rel=1e-9)
    assert res["n_nonzero"] == 30


# --- rendering ---------------------------------------------------------------

def two_point_trace():
    return EpisodeTrace([row(0, 100.0, 200.0, 300.0, 0.0), row(1, 130.0, 200.0, 300.0, 30.0)])


def test_svg_two_points():
    doc = render_svg(two_point_trace(), vent=(1000.0, 1000.0))
    root = ET.fromstring(doc.encode())
    lines = root.findall("{http://www.w3.org/2000/svg}polyline")
    assert len(lines) == 1
    assert len(lines[0].get("points").split()) == 2
    assert doc == render_svg(two_point_trace(), vent=(1000.0, 1000.0))


def test_svg_zero_grid_is_background(tmp_path):
    spec = GridSpec(nx=4, ny=3, nz=2, nt=2, dx=500, dy=600, dz=200)
    doc = render_svg(two_point_trace(), ForecastGrid(spec, np.zeros(spec.shape)), 1, 1, tmp_path / "m.svg")
    ns = "{http://www.w3.org/2000/svg}"
    cells = ET.fromstring(doc.encode()).find(f"{ns}g").findall(f"{ns}rect")
    assert len(cells) == 12 and {c.get("fill") for c in cells} == {"rgb(255,255,255)"}
    assert (tmp_path / "m.svg").read_text() == doc
    with pytest.raises(InvalidArgumentError):
        render_svg(two_point_trace(), ForecastGrid(spec, np.zeros(spec.shape)), 2, 0)
    with pytest.raises(InvalidArgumentError):
        render_svg(EpisodeTrace([]))


# --- CLI -------------------------------------------------------------------

@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SHORT))
    return p


def test_parse_seeds():
    assert parse_seeds("3..5") == [3, 4, 5]
    assert parse_seeds("1,4") == [1, 4]


def test_cli_end_to_end(tmp_path, cfg_file):
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg_file), "--policy", "random", "--seed", "1",
                 "--out", str(sim)]) == 0
    for name in ("trace.csv", "summary.json", "map.svg", "telemetry.json", "signals.png"):
        assert (sim / name).exists()
    fc = tmp_path / "fc"
    small = tmp_path / "small.json"
    small.write_text(json.dumps({**SHORT, "phumes": {"grid": {"nx": 8, "ny": 8, "nz": 4, "nt": 1, "dx": 250,
                                                                "dy": 250, "dz": 100, "dt": 1800}}}))
    assert main(["forecast", "--config", str(small), "--particles", "5", "--out", str(fc)]) == 0
    assert (fc / "grid.csv").exists() and (fc / "grid.meta.json").exists() and (fc / "forecast.png").exists()
    opt = tmp_path / "opt.json"
    assert main(["optimize", "--grid", str(fc), "--config", str(small), "--out", str(opt)]) == 0
    doc = json.loads(opt.read_text())
    assert doc["score"] >= doc["default_score"]
    svg = tmp_path / "r.svg"
    assert main(["render", "--trace", str(sim / "trace.csv"), "--grid", str(fc), "--out", str(svg)]) == 0
    ET.fromstring(svg.read_bytes())
    bench = tmp_path / "bench"
    assert main(["bench", "--config", str(cfg_file), "--policies", "random,lawnmower_fixed", "--seeds", "0..1",
                 "--out", str(bench), "--no-figures"]) == 0
    assert len(json.loads((bench / "report.json").read_text())["cells"]) == 4


@pytest.mark.parametrize("argv", [
    ["simulate", "--config", "MISSING", "--policy", "random", "--seed", "0", "--out", "x"],
    ["simulate", "--config", "CFG", "--policy", "teleport", "--seed", "0", "--out", "x"],
    ["bench", "--config", "CFG", "--policies", "random", "--seeds", "5..2", "--out", "x"],
    ["bench", "--config", "CFG", "--policies", "warp", "--seeds", "0", "--out", "x"],
    ["forecast", "--config", "BAD", "--particles", "3", "--out", "x"],
    ["render", "--trace", "MISSING", "--out", "x.svg"],
    ["frobnicate"],
])
def test_cli_validation_exit_code(argv, tmp_path, cfg_file):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"planner": {"budget": -1}}))
    subs = {"MISSING": str(tmp_path / "nope.json"), "CFG": str(cfg_file), "BAD": str(bad),
            "x": str(tmp_path / "o"), "x.svg": str(tmp_path / "o.svg")}
    assert main([subs.get(a, a) for a in argv]) == 1


def test_cli_runtime_failure_exit_code(tmp_path, cfg_file, monkeypatch):
    import expedition.cli as cli

    def boom(*args, **kwargs):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "run_episode", boom)
    assert main(["simulate", "--config", str(cfg_file), "--policy", "random", "--seed", "0",
                 "--out", str(tmp_path / "o")]) == 2


def test_console_script_installed():
    out = subprocess.run([sys.executable, "-m", "expedition.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
