"""Progressive-widening Monte Carlo tree search over a compiled generative model.

The search is model-agnostic.  A model is four ``@njit`` functions sharing a
``params`` tuple (read-only problem data) and a ``ws`` tuple of arrays
(scratch state for the simulation currently being rolled out):

    reset(params, ws)                               load the root state
    propose(params, ws, depth, n_existing, out) -> bool
                                                    write a new action into
                                                    ``out``; False if none left
    step(params, ws, depth, action) -> (obs_key, reward)
                                                    advance ws one step
    rollout_action(params, ws, depth, out)          default-policy action

Children of an action edge are keyed by the integer ``obs_key``; a model
with continuous observations returns a constant key, which collapses the
observation layer into a single child per edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit


# Not disk-cached: the model callbacks are part of the signature, and a cache
# index keyed by dispatcher types cannot be reloaded in another process.
@njit
def _search(reset, propose, step, rollout_action, params, ws, action_dim,
            budget, H, gamma, c_ucb, k_pw, alpha_pw, rollout_depth, seed):
    np.random.seed(seed)
    max_nodes = budget + 1
    max_edges = budget * H + 1
    node_N = np.zeros(max_nodes, np.int64)
    node_first = np.full(max_nodes, -1, np.int64)
    node_last = np.full(max_nodes, -1, np.int64)
    node_nedges = np.zeros(max_nodes, np.int64)
    node_obs = np.zeros(max_nodes, np.int64)
    node_sib = np.full(max_nodes, -1, np.int64)
    node_depth = np.zeros(max_nodes, np.int64)
    edge_N = np.zeros(max_edges, np.int64)
    edge_Q = np.zeros(max_edges, np.float64)
    edge_act = np.zeros((max_edges, action_dim), np.float64)
    edge_next = np.full(max_edges, -1, np.int64)
    edge_child = np.full(max_edges, -1, np.int64)
    edge_parent = np.zeros(max_edges, np.int64)
    n_nodes = 1
    n_edges = 0

    path_e = np.zeros(H, np.int64)
    path_r = np.zeros(H, np.float64)
    buf = np.zeros(action_dim, np.float64)
    r_max = 0.0
    completed = 0

    for _ in range(budget):
        reset(params, ws)
        node = 0
        depth = 0
        plen = 0
        leaf = 0.0
        while depth < H:
            node_N[node] += 1
            limit = math.ceil(k_pw * node_N[node] ** alpha_pw)
            if node_nedges[node] < limit:
                if propose(params, ws, depth, node_nedges[node], buf):
                    e = n_edges
                    n_edges += 1
                    edge_act[e, :] = buf
                    edge_parent[e] = node
                    if node_last[node] < 0:
                        node_first[node] = e
                    else:
                        edge_next[node_last[node]] = e
                    node_last[node] = e
                    node_nedges[node] += 1
            if node_nedges[node] == 0:
                break
            # UCB selection; unvisited edges first, in creation order
            explore = c_ucb * r_max
            log_n = math.log(node_N[node])
            best = -1
            best_val = -np.inf
            e = node_first[node]
            while e >= 0:
                if edge_N[e] == 0:
                    best = e
                    break
                val = edge_Q[e] + explore * math.sqrt(log_n / edge_N[e])
                if val > best_val:
                    best_val = val
                    best = e
                e = edge_next[e]
            obs, r = step(params, ws, depth, edge_act[best])
            if r > r_max:
                r_max = r
            path_e[plen] = best
            path_r[plen] = r
            plen += 1
            depth += 1
            child = edge_child[best]
            while child >= 0 and node_obs[child] != obs:
                child = node_sib[child]
            if child < 0:
                child = n_nodes
                n_nodes += 1
                node_obs[child] = obs
                node_depth[child] = depth
                node_N[child] = 1
                node_sib[child] = edge_child[best]
                edge_child[best] = child
                steps = min(rollout_depth, H - depth)
                disc = 1.0
                for i in range(steps):
                    rollout_action(params, ws, depth + i, buf)
                    _, r2 = step(params, ws, depth + i, buf)
                    if r2 > r_max:
                        r_max = r2
                    leaf += disc * r2
                    disc *= gamma
                break
            node = child
        g = leaf
        for i in range(plen - 1, -1, -1):
            g = path_r[i] + gamma * g
            e = path_e[i]
            edge_N[e] += 1
            edge_Q[e] += (g - edge_Q[e]) / edge_N[e]
        completed += 1

    # robust child: most visits, then larger Q, then first created
    best = -1
    e = node_first[0]
    while e >= 0:
        if best < 0 or edge_N[e] > edge_N[best] or (edge_N[e] == edge_N[best] and edge_Q[e] > edge_Q[best]):
            best = e
        e = edge_next[e]
    return (best, completed, r_max, n_nodes, n_edges,
            node_N[:n_nodes].copy(), node_nedges[:n_nodes].copy(), node_depth[:n_nodes].copy(),
            edge_N[:n_edges].copy(), edge_Q[:n_edges].copy(), edge_act[:n_edges].copy(),
            edge_parent[:n_edges].copy())


@dataclass
class SearchTree:
    """Flat snapshot of a finished search, for telemetry and audits."""

    root_edge: int
    simulations: int
    r_max: float
    node_visits: np.ndarray
    node_children: np.ndarray
    node_depth: np.ndarray
    edge_visits: np.ndarray
    edge_q: np.ndarray
    edge_action: np.ndarray
    edge_parent: np.ndarray

    @property
    def size(self):
        return len(self.node_visits)

    @property
    def root_action(self):
        return self.edge_action[self.root_edge]

    @property
    def root_q(self):
        return float(self.edge_q[self.root_edge])

    def root_edges(self):
        return np.flatnonzero(self.edge_parent == 0)


def search(model, params, ws, action_dim, *, budget, H, gamma, c_ucb, k_pw, alpha_pw,
           rollout_depth, seed) -> SearchTree:
    """Run ``budget`` simulations from the root described by ``params``/``ws``."""
    reset, propose, step, rollout_action = model
    out = _search(reset, propose, step, rollout_action, params, ws, action_dim,
                  int(budget), int(H), float(gamma), float(c_ucb), float(k_pw),
                  float(alpha_pw), int(rollout_depth), int(seed))
    best, completed, r_max = out[0], out[1], out[2]
    assert completed >= 1 and best >= 0, "search finished without a complete simulation"
    return SearchTree(int(best), int(completed), float(r_max), *out[5:])


def audit_widening(tree: SearchTree, k_pw, alpha_pw):
    """Node ids whose child count breaks ceil(k_pw * N**alpha_pw)."""
    limit = np.ceil(k_pw * np.maximum(tree.node_visits, 0) ** alpha_pw)
    return np.flatnonzero(tree.node_children > limit)
