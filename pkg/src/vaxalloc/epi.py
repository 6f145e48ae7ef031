"""Discrete-time metapopulation SIRD stepping, with and without vaccination.

All compartments are per-node proportions; the dead compartment is the
residual so per-node closure holds by construction. Updates are simultaneous:
every t+1 value is computed from the full t snapshot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .net import FlowMatrix

STABILITY_BAND = 1e-9


class EpidemicInstabilityError(RuntimeError):
    """A compartment proportion left [0, 1] beyond the tolerance band."""

    def __init__(self, period: int, node: int, value: float):
        super().__init__(
            f"compartment proportion {value!r} out of range at period {period}, node {node}")
        self.period = period
        self.node = node
        self.value = value


@dataclass
class EpiParams:
    beta: np.ndarray
    gamma: np.ndarray
    cfr: np.ndarray  # case fatality fraction of recoveries

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.cfr = np.asarray(self.cfr, dtype=float)
        if np.any(self.beta < 0):
            raise ValueError("transmission rates must be nonnegative")
        if np.any((self.gamma < 0) | (self.gamma > 1)):
            raise ValueError("recovery rates must be in [0, 1]")
        if np.any((self.cfr < 0) | (self.cfr > 1)):
            raise ValueError("case fatality rates must be in [0, 1]")


@dataclass
class CompartmentState:
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    d: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.i = np.asarray(self.i, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.d = np.asarray(self.d, dtype=float)

    def validate(self, tol: float = 1e-12) -> None:
        total = self.s + self.i + self.r + self.d
        if np.any(np.abs(total - 1.0) > tol):
            raise ValueError("compartment proportions do not sum to 1")
        for arr in (self.s, self.i, self.r, self.d):
            if np.any((arr < -tol) | (arr > 1 + tol)):
                raise ValueError("compartment proportion outside [0, 1]")


def step(state: CompartmentState, params: EpiParams, net: FlowMatrix) -> CompartmentState:
    """One unvaccinated period: the zero-allocation case of the vaccinated
    update, so the two stay bit-identical by construction."""
    zeros = np.zeros_like(state.s)
    return step_vaccinated(state, params, net, zeros, zeros)


def step_vaccinated(state: CompartmentState, params: EpiParams, net: FlowMatrix,
                    x: np.ndarray, theta_obs: np.ndarray) -> CompartmentState:
    """One period with vaccination fractions x and realized efficiencies."""
    x = np.asarray(x, dtype=float)
    theta_obs = np.asarray(theta_obs, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("allocation fractions must be in [0, 1]")
    if np.any(x > 0):
        active = theta_obs[x > 0]
        if np.any(~np.isfinite(active)) or np.any((active < 0) | (active > 1)):
            raise ValueError("realized efficiency must be in [0, 1] where allocated")

    s, i, r = state.s, state.i, state.r
    p = net.rates
    rs = net.rate_row_sum
    rho = net.rho
    vx = theta_obs * x
    keep = 1.0 - vx

    new_inf = params.beta * s * i
    sv = s * keep
    rv = r + s * vx

    s1 = (s - new_inf) * keep + rho * (p @ sv - rs * sv)
    i1 = i + new_inf * keep - params.gamma * i + rho * (p @ i - rs * i)
    r1 = rv + (1.0 - params.cfr) * params.gamma * i + rho * (p @ rv - rs * rv)
    d1 = 1.0 - s1 - i1 - r1

    t1 = state.t + 1
    for arr in (s1, i1, r1, d1):
        bad = (arr < -STABILITY_BAND) | (arr > 1.0 + STABILITY_BAND)
        if np.any(bad):
            node = int(np.flatnonzero(bad)[0])
            raise EpidemicInstabilityError(t1, node, float(arr[node]))
    s1 = np.clip(s1, 0.0, 1.0)
    i1 = np.clip(i1, 0.0, 1.0)
    r1 = np.clip(r1, 0.0, 1.0)
    d1 = 1.0 - s1 - i1 - r1
    neg = d1 < 0.0
    if np.any(neg):
        # residual deficit within the band: rescale the live compartments
        scale = 1.0 / (s1[neg] + i1[neg] + r1[neg])
        s1[neg] *= scale
        i1[neg] *= scale
        r1[neg] *= scale
        d1[neg] = 1.0 - s1[neg] - i1[neg] - r1[neg]
    return CompartmentState(s=s1, i=i1, r=r1, d=d1, t=t1)


def write_states(states: list[CompartmentState], path) -> None:
    """Snapshot export: rows t,node_id,s,i,r,d."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node_id", "s", "i", "r", "d"])
        for st in states:
            for node in range(st.s.shape[0]):
                w.writerow([st.t, node, repr(float(st.s[node])), repr(float(st.i[node])),
                            repr(float(st.r[node])), repr(float(st.d[node]))])
