"""Allocation policies: sampled losses, greedy knapsack, Beta-Bernoulli learning.

Four per-agent policies are supported. TS samples node efficiencies from Beta
posteriors, GY uses the posterior mean, MA uses the running mean of observed
efficiencies, and PB spreads budget proportionally to population. TS/GY/MA all
minimize the same one-period-ahead loss through the greedy fractional knapsack.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .epi import CompartmentState, EpiParams
from .net import FlowMatrix

POLICIES = ("ts", "gy", "ma", "pb", "none")


@dataclass
class BetaPrior:
    a: int = 1
    b: int = 1

    def __post_init__(self):
        if self.a < 1 or self.b < 1:
            raise ValueError("Beta counts must be >= 1")


@dataclass
class PolicyState:
    """Per-node learning state shared across periods.

    ``alloc_csum[t]`` holds cumulative allocations through period t
    (1-indexed periods; row 0 is all zeros) so windowed bound sums are two
    lookups. Observation history only records periods with a positive
    allocation.
    """

    n: int
    horizon: int
    window: np.ndarray  # per-node m_i
    a: np.ndarray = field(init=False)
    b: np.ndarray = field(init=False)
    obs_history: list[list[float]] = field(init=False)
    alloc_csum: np.ndarray = field(init=False)

    def __post_init__(self):
        self.window = np.asarray(self.window, dtype=int)
        if np.any(self.window < 1):
            raise ValueError("window widths must be >= 1")
        self.a = np.ones(self.n, dtype=np.int64)
        self.b = np.ones(self.n, dtype=np.int64)
        self.obs_history = [[] for _ in range(self.n)]
        self.alloc_csum = np.zeros((self.horizon + 1, self.n))

    def record_allocation(self, t: int, x: np.ndarray) -> None:
        self.alloc_csum[t] = self.alloc_csum[t - 1] + x


@dataclass
class AllocationProblem:
    losses: np.ndarray
    costs: np.ndarray
    budget: float
    bounds: np.ndarray

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=float)
        self.costs = np.asarray(self.costs, dtype=float)
        self.bounds = np.asarray(self.bounds, dtype=float)
        if np.any(self.costs <= 0):
            raise ValueError("costs must be positive")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        if np.any((self.bounds < 0) | (self.bounds > 1)):
            raise ValueError("bounds must be in [0, 1]")


@dataclass
class Allocation:
    x: np.ndarray


def loss_coefficients(state: CompartmentState, params: EpiParams, net: FlowMatrix,
                      agent_nodes: np.ndarray, theta_hat: np.ndarray) -> np.ndarray:
    """Coefficient of each agent node's allocation in the one-period-ahead
    susceptible objective, assuming other agents allocate nothing.

    l_i = theta_i * S_i * (-(1 - beta_i I_i) + rho * sum_j p_ij
          - rho * sum over same-agent rows j with i in N_j of p_ji).
    """
    agent_nodes = np.asarray(agent_nodes, dtype=int)
    rows = net.rates[agent_nodes, :]
    col_in = np.asarray(rows.sum(axis=0)).ravel()  # sum_{j in V_k} p_ji over cols i
    s = state.s[agent_nodes]
    beta = params.beta[agent_nodes]
    inf = state.i[agent_nodes]
    out_sum = net.rate_row_sum[agent_nodes]
    th = np.asarray(theta_hat, dtype=float)[agent_nodes]
    return th * s * (-(1.0 - beta * inf) + net.rho * out_sum
                     - net.rho * col_in[agent_nodes])


def solve_knapsack(problem: AllocationProblem) -> Allocation:
    """Greedy fractional knapsack: fund nodes by increasing loss-to-cost ratio
    (ties broken by ascending index) while the loss is negative and budget
    remains; the last funded node gets the fractional remainder."""
    l, c, ub = problem.losses, problem.costs, problem.bounds
    n = l.shape[0]
    x = np.zeros(n)
    candidates = np.flatnonzero(l < 0)
    if candidates.size == 0 or problem.budget <= 0:
        return Allocation(x=x)
    order = candidates[np.lexsort((candidates, l[candidates] / c[candidates]))]
    remaining = float(problem.budget)
    for idx in order:
        take = min(ub[idx], remaining / c[idx])
        if take <= 0:
            continue
        x[idx] = take
        remaining -= take * c[idx]
        if remaining <= 0:
            break
    return Allocation(x=x)


def ts_sample(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Beta(a_i, b_i) draws per node."""
    return rng.beta(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def gy_estimate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Posterior means a / (a + b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a / (a + b)


def ma_estimate(obs_history: list[list[float]]) -> np.ndarray:
    """Running mean of observed efficiencies; 0.5 for unobserved nodes to
    match the uniform-prior mean used by TS/GY."""
    out = np.empty(len(obs_history))
    for node, hist in enumerate(obs_history):
        out[node] = sum(hist) / len(hist) if hist else 0.5
    return out


def pb_allocate(costs: np.ndarray, budget: float, bounds: np.ndarray) -> Allocation:
    """Population-proportional coverage: uniform fraction budget/total cost,
    capped by bounds, with any residual spilled in descending-population
    order. Independent of epidemic state and efficiencies."""
    costs = np.asarray(costs, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    n = costs.shape[0]
    total = costs.sum()
    if total <= 0 or budget <= 0:
        return Allocation(x=np.zeros(n))
    base = budget / total
    x = np.minimum(bounds, base)
    residual = budget - float(x @ costs)
    if residual > 0:
        order = np.lexsort((np.arange(n), -costs))
        for idx in order:
            if residual <= 0:
                break
            room = bounds[idx] - x[idx]
            if room <= 0:
                continue
            add = min(room, residual / costs[idx])
            x[idx] += add
            residual -= add * costs[idx]
    return Allocation(x=x)


def update_bounds(pol: PolicyState, t: int) -> np.ndarray:
    """Upper bounds for period t from allocations in [max(t - m_i, 1), t - 1].

    The window covers decisions strictly before t so the current period's
    decision is never deducted from its own bound.
    """
    if t < 1:
        raise ValueError("periods are 1-indexed")
    start = np.maximum(t - pol.window, 1)
    idx = np.arange(pol.n)
    window_sum = pol.alloc_csum[t - 1, idx] - pol.alloc_csum[start - 1, idx]
    return np.maximum(0.0, 1.0 - window_sum)


def window_width(populations: np.ndarray, net: FlowMatrix, horizon: int) -> np.ndarray:
    """m_i = ceil(P_i / inflow_i); nodes with zero inflow are never renewed
    and get the full horizon."""
    populations = np.asarray(populations, dtype=float)
    inflow = net.inflow()
    m = np.full(populations.shape[0], horizon, dtype=int)
    pos = inflow > 0
    m[pos] = np.ceil(populations[pos] / inflow[pos]).astype(int)
    return np.maximum(m, 1)


def observe_and_update(pol: PolicyState, x: np.ndarray, theta_obs: np.ndarray,
                       rng: np.random.Generator) -> None:
    """Bernoulli trials at the realized efficiencies for allocated nodes;
    successes bump a_i, failures bump b_i. Unallocated nodes are untouched.

    One uniform is drawn per node regardless of allocation so the trial
    outcome at a node depends only on the stream position, keeping paired
    policy runs aligned.
    """
    x = np.asarray(x, dtype=float)
    theta_obs = np.asarray(theta_obs, dtype=float)
    u = rng.random(pol.n)
    active = x > 0
    success = active & (u < theta_obs)
    failure = active & ~(u < theta_obs)
    pol.a[success] += 1
    pol.b[failure] += 1
    for node in np.flatnonzero(active):
        pol.obs_history[node].append(float(theta_obs[node]))


def write_allocation_trace(path, rows) -> None:
    """Trace export: t,agent_id,node_id,x,theta_hat,theta_obs,bound."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "agent_id", "node_id", "x", "theta_hat", "theta_obs", "bound"])
        for row in rows:
            w.writerow(row)
