"""Budget-balanced resource sharing among agents.

Each agent offers a slice of its budget equal to its external infection
ratio; offers are split among the agents whose infected populations flow
into the offering agent, weighted inversely by the receiving agent's
vaccination capacity. Transfers always sum to zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .epi import CompartmentState, EpiParams
from .net import FlowMatrix


@dataclass
class InfectionSplit:
    internal: np.ndarray  # per-node, same-agent infection pressure
    external: np.ndarray  # per-node, cross-agent infection pressure


@dataclass
class SharingPlan:
    ratios: np.ndarray            # per-agent offered fraction of budget
    infected_flows: np.ndarray    # [k', k]: infected flow from agent k' into k
    budgets_out: np.ndarray       # per-agent effective budgets


def infection_split(state: CompartmentState, params: EpiParams, net: FlowMatrix,
                    agent_of: np.ndarray) -> InfectionSplit:
    """Split each node's next-period infection pressure into same-agent and
    cross-agent mobility sources."""
    agent_of = np.asarray(agent_of, dtype=int)
    coo = net.rates.tocoo()
    same = agent_of[coo.row] == agent_of[coo.col]
    inf = state.i
    contrib = coo.data * inf[coo.col]
    mob_same = np.zeros(net.n)
    mob_cross = np.zeros(net.n)
    np.add.at(mob_same, coo.row[same], contrib[same])
    np.add.at(mob_cross, coo.row[~same], contrib[~same])
    internal = inf + params.beta * state.s * inf - params.gamma * inf + net.rho * mob_same
    external = net.rho * mob_cross
    return InfectionSplit(internal=internal, external=external)


def sharing_ratios(split: InfectionSplit, agent_of: np.ndarray,
                   n_agents: int) -> np.ndarray:
    """Per-agent external / (internal + external) infection ratio; defined
    as 0 when an agent has no infections at all."""
    agent_of = np.asarray(agent_of, dtype=int)
    internal = np.bincount(agent_of, weights=split.internal, minlength=n_agents)
    external = np.bincount(agent_of, weights=split.external, minlength=n_agents)
    total = internal + external
    return np.where(total > 0, external / np.where(total > 0, total, 1.0), 0.0)


def infected_flow_matrix(state: CompartmentState, net: FlowMatrix,
                         agent_of: np.ndarray, n_agents: int) -> np.ndarray:
    """M[k', k] = rho * sum over i in V_k, j in N_i with owner k' of
    p_ij * I_j; the diagonal is zero by construction."""
    agent_of = np.asarray(agent_of, dtype=int)
    coo = net.rates.tocoo()
    contrib = net.rho * coo.data * state.i[coo.col]
    mat = np.zeros((n_agents, n_agents))
    np.add.at(mat, (agent_of[coo.col], agent_of[coo.row]), contrib)
    np.fill_diagonal(mat, 0.0)
    return mat


def redistribute(budgets: np.ndarray, ratios: np.ndarray,
                 infected_flows: np.ndarray, capacities: np.ndarray) -> np.ndarray:
    """Effective budgets after sharing.

    Agent k keeps (1 - R_k) B_k; the offered R_k B_k is split among agents
    k'' proportionally to infected_flows[k'', k] / capacity[k'']. An offer
    with no incoming infected flow anywhere is retained by its owner, which
    keeps the total exactly conserved in degenerate cases.
    """
    budgets = np.asarray(budgets, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    capacities = np.asarray(capacities, dtype=float)
    if np.any(capacities <= 0):
        raise ValueError("capacities must be positive")
    if np.any(budgets < 0):
        raise ValueError("budgets must be nonnegative")
    offered = budgets * ratios
    weights = infected_flows / capacities[:, None]  # [receiver, offerer]
    denom = weights.sum(axis=0)
    out = budgets * (1.0 - ratios)
    live = denom > 0
    if np.any(live):
        shares = weights[:, live] / denom[live]
        out += shares @ offered[live]
    out[~live] += offered[~live]
    return out


def plan_sharing(state: CompartmentState, params: EpiParams, net: FlowMatrix,
                 agent_of: np.ndarray, budgets: np.ndarray,
                 capacities: np.ndarray) -> SharingPlan:
    """Full sharing computation for one period from a state snapshot."""
    n_agents = budgets.shape[0]
    split = infection_split(state, params, net, agent_of)
    ratios = sharing_ratios(split, agent_of, n_agents)
    flows = infected_flow_matrix(state, net, agent_of, n_agents)
    budgets_out = redistribute(budgets, ratios, flows, capacities)
    return SharingPlan(ratios=ratios, infected_flows=flows, budgets_out=budgets_out)


def write_sharing_trace(path, rows) -> None:
    """Trace export: t,agent_id,ratio,budget_in,budget_out,budget_effective."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "agent_id", "ratio", "budget_in", "budget_out",
                    "budget_effective"])
        for row in rows:
            w.writerow(row)
