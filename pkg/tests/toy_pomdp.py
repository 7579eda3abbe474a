"""A tabular 1-D search POMDP for checking the tree search against exact expectimax.

The robot sits on a line of ``N_CELLS`` cells; a hidden target occupies one
cell drawn from ``PRIOR``.  Actions move left, stay or move right (clipped at
the ends).  After each move the robot earns 1 if it is on the target and
receives a binary "near" reading (target within one cell) that is correct with
probability ``ACCURACY``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

N_CELLS = 5
START = 2
ACTIONS = (-1, 0, 1)
PRIOR = np.array([0.05, 0.1, 0.15, 0.25, 0.45])
ACCURACY = 0.8


def make_params():
    return (np.cumsum(PRIOR), np.array([float(START), float(N_CELLS), ACCURACY]))


def make_ws():
    return (np.zeros(2, np.int64),)  # (robot cell, target cell)


@njit
def toy_reset(params, ws):
    cdf, scal = params
    st = ws[0]
    st[0] = int(scal[0])
    u = np.random.random()
    g = 0
    while g < cdf.shape[0] - 1 and u >= cdf[g]:
        g += 1
    st[1] = g


@njit
def toy_propose(params, ws, depth, n_existing, out):
    if n_existing >= 3:
        return False
    out[0] = n_existing - 1.0
    return True


@njit
def toy_step(params, ws, depth, action):
    scal = params[1]
    st = ws[0]
    p = st[0] + int(action[0])
    p = min(max(p, 0), int(scal[1]) - 1)
    st[0] = p
    reward = 1.0 if p == st[1] else 0.0
    near = abs(p - st[1]) <= 1
    if np.random.random() >= scal[2]:
        near = not near
    return (1 if near else 0), reward


@njit
def toy_rollout(params, ws, depth, out):
    out[0] = np.random.randint(0, 3) - 1.0


TOY_MODEL = (toy_reset, toy_propose, toy_step, toy_rollout)


def expectimax(H, gamma):
    """Exact root values per action by enumerating the belief tree."""

    def obs_prob(pos, near_reading):
        near = np.abs(pos - np.arange(N_CELLS)) <= 1
        return np.where(near == bool(near_reading), ACCURACY, 1.0 - ACCURACY)

    def value(pos, belief, depth):
        if depth == H:
            return 0.0
        return max(q(pos, belief, depth, a) for a in ACTIONS)

    def q(pos, belief, depth, a):
        p = min(max(pos + a, 0), N_CELLS - 1)
        total = belief[p]
        for o in (0, 1):
            joint = belief * obs_prob(p, o)
            po = joint.sum()
            if po > 0:
                total += gamma * po * value(p, joint / po, depth + 1)
        return total

    return {a: q(START, PRIOR.copy(), 0, a) for a in ACTIONS}
