"""Seeded policy benchmark over the (policy, seed) cross product."""

from __future__ import annotations

import csv
import io
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import wilcoxon

from .config import MissionConfig
from .episode import run_episode
from .errors import InvalidArgumentError
from .planner import PolicyKind

MASK64 = (1 << 64) - 1
METRICS = ("maxseek_regret", "inplume_fraction", "cumulative_reward")
WORLD_STREAM = 0  # policy streams use 1 + the policy's position in PolicyKind


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(*parts: int) -> int:
    """Chain splitmix64 over the parts; distinct tuples give unrelated seeds."""
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


def cell_seeds(master: int, policy, seed: int):
    """(policy seed, world seed) for one cell.

    The policy stream is keyed by the policy kind, so a policy listed twice
    reproduces itself; the world stream depends only on the seed, so every
    policy in a row of the table faces the same vent and sensor noise.
    """
    kind_index = list(PolicyKind).index(PolicyKind(policy))
    return derive_seed(master, 1 + kind_index, seed), derive_seed(master, WORLD_STREAM, seed)


@dataclass
class BenchReport:
    policies: list
    seeds: list
    cells: list  # dicts in (policy, seed) row-major order
    aggregate: dict = field(default_factory=dict)
    comparisons: list = field(default_factory=list)

    def cell(self, policy, seed):
        for c in self.cells:
            if c["policy"] == policy and c["seed"] == seed:
                return c
        raise KeyError((policy, seed))

    def regrets(self, policy):
        return [c["maxseek_regret"] for c in self.cells if c["policy"] == policy and c["status"] == "ok"]

    def to_dict(self):
        return {"policies": self.policies, "seeds": self.seeds,
                "cells": [{k: v for k, v in c.items() if k != "wall_s"} for c in self.cells],
                "aggregate": self.aggregate, "comparisons": self.comparisons}

    def to_csv(self) -> str:
        cols = ("policy", "seed", "status", *METRICS, "reason")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for c in self.cells:
            w.writerow([repr(float(c[k])) if isinstance(c[k], float) else c[k] for k in cols])
        return buf.getvalue()

    def write(self, out_dir, figure=True):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.to_csv())
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        tele = [{"policy": c["policy"], "seed": c["seed"], "wall_s": c["wall_s"]} for c in self.cells]
        (out / "telemetry.json").write_text(json.dumps(tele, indent=2) + "\n")
        if figure:
            from .render import plot_bench

            plot_bench({p: self.regrets(p) for p in dict.fromkeys(self.policies)}, out / "regret.png")


def _run_cell(args):
    cfg, policy, seed, master = args
    pseed, wseed = cell_seeds(master, policy, seed)
    t0 = time.perf_counter()
    try:
        _, s = run_episode(cfg, policy, pseed, world_seed=wseed)
        cell = {"status": s.status, "reason": s.reason, **{k: s.metrics[k] for k in METRICS}}
    except Exception as exc:  # a broken cell is recorded, never fatal to the batch
        cell = {"status": "failed", "reason": f"{type(exc).__name__}: {exc}",
                **{k: float("nan") for k in METRICS}}
        cell["trace"] = traceback.format_exc(limit=3)
    cell.pop("trace", None)
    return {"policy": PolicyKind(policy).value, "seed": seed, "policy_seed": pseed, "world_seed": wseed,
            **cell, "wall_s": time.perf_counter() - t0}


def threads_from_env() -> int:
    raw = os.environ.get("EXPEDITION_THREADS", "0")
    try:
        n = int(raw)
    except ValueError as exc:
        raise InvalidArgumentError(f"EXPEDITION_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise InvalidArgumentError("EXPEDITION_THREADS must be >= 0")
    return n


def run_bench(cfg: MissionConfig, policies, seeds, threads: int | None = None) -> BenchReport:
    """Run every (policy, seed) cell and compare policies pairwise on final regret.

    ``threads`` (default: EXPEDITION_THREADS) > 0 runs cells in that many
    worker processes; results are identical to the serial run.
    """
    policies = [PolicyKind(p).value for p in policies]
    seeds = [int(s) for s in seeds]
    if not policies or not seeds:
        raise InvalidArgumentError("policies and seeds must be nonempty")
    threads = threads_from_env() if threads is None else threads
    jobs = [(cfg, p, s, cfg.seed) for p in policies for s in seeds]
    if threads > 0:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]
    report = BenchReport(policies, seeds, cells)
    report.aggregate = _aggregate(report)
    report.comparisons = _compare(report)
    return report


def _aggregate(report: BenchReport):
    agg = {}
    for p in dict.fromkeys(report.policies):
        ok = [c for c in report.cells if c["policy"] == p and c["status"] == "ok"]
        entry = {"n_ok": len(ok), "n_failed": sum(c["policy"] == p for c in report.cells) - len(ok)}
        for k in METRICS:
            v = np.array([c[k] for c in ok])
            entry[k] = ({"mean": float(v.mean()), "median": float(np.median(v)), "std": float(v.std())}
                        if len(v) else None)
        agg[p] = entry
    return agg


def paired_wilcoxon(a, b):
    """One-sided paired signed-rank test of H1: a tends to be smaller than b.

    Zero differences are dropped.  ``statistic`` is W+, the rank sum of the
    positive differences a - b.
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    nz = int(np.count_nonzero(d))
    if nz == 0:
        return {"statistic": 0.0, "p_less": 1.0, "p_greater": 1.0, "n_nonzero": 0}
    less = wilcoxon(d, zero_method="wilcox", alternative="less")
    greater = wilcoxon(d, zero_method="wilcox", alternative="greater")
    return {"statistic": float(less.statistic), "p_less": float(less.pvalue),
            "p_greater": float(greater.pvalue), "n_nonzero": nz}


def _compare(report: BenchReport):
    out = []
    for i, a in enumerate(report.policies):
        for b in report.policies[i + 1:]:
            pairs = [(report.cell(a, s), report.cell(b, s)) for s in report.seeds]
            pairs = [(ca["maxseek_regret"], cb["maxseek_regret"]) for ca, cb in pairs
                     if ca["status"] == "ok" and cb["status"] == "ok"]
            entry = {"a": a, "b": b, "n_pairs": len(pairs)}
            if pairs:
                ra, rb = map(list, zip(*pairs))
                entry.update(paired_wilcoxon(ra, rb))
                entry["mean_difference"] = float(np.mean(np.subtract(ra, rb)))
            out.append(entry)
    return out
