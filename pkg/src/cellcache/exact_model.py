"""Exact physical model: SINR, rates, power, delay, objective and the full
constraint set, evaluated for a candidate assignment.

All functions are pure; infinite delay (zero rate with positive demand) is
represented by ``math.inf`` so that objective comparisons stay total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario

__all__ = [
    "Assignment",
    "ObjectiveWeights",
    "ModelReport",
    "sinr",
    "sinr_from_powers",
    "rate",
    "rate_matrix",
    "sbs_power",
    "backhaul_rate",
    "user_delay",
    "objective",
    "split_objective",
    "binary_objective",
    "backhaul_load",
    "check_feasibility",
    "constraint_margins",
    "model_report",
]

CONSTRAINT_TOL = 1e-9


@dataclass(frozen=True)
class Assignment:
    """Decision triple: association x (U x B), placement y (B x F),
    transmit powers p (U x B, watts)."""

    association: np.ndarray
    placement: np.ndarray
    tx_power_w: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.association, dtype=int)
        y = np.asarray(self.placement, dtype=int)
        p = np.asarray(self.tx_power_w, dtype=float)
        for arr in (x, y, p):
            arr.setflags(write=False)
        object.__setattr__(self, "association", x)
        object.__setattr__(self, "placement", y)
        object.__setattr__(self, "tx_power_w", p)
        if not np.isin(x, (0, 1)).all() or not np.isin(y, (0, 1)).all():
            raise ValueError("association and placement must be binary")
        if np.any(x.sum(axis=1) != 1):
            raise ValueError("each user must be associated with exactly one SBS")
        if p.shape != x.shape:
            raise ValueError("power matrix must match association shape")
        if np.any(p < 0):
            raise ValueError("powers must be nonnegative")
        if np.any((p > 0) & (x == 0)):
            raise ValueError("positive power on an inactive user/SBS pair")

    @property
    def serving_sbs(self) -> np.ndarray:
        return np.argmax(self.association, axis=1)


@dataclass(frozen=True)
class ObjectiveWeights:
    theta: float
    delta_p: float = 0.002
    delta_d: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.delta_p <= 0 or self.delta_d <= 0:
            raise ValueError("normalization factors must be positive")


@dataclass(frozen=True)
class ModelReport:
    per_sbs_power_w: dict[str, np.ndarray]
    per_user_delay_s: dict[str, np.ndarray]
    objective_value: float
    constraint_violations: list[tuple[str, float]] = field(default_factory=list)


def sinr_from_powers(scenario: Scenario, powers: np.ndarray, i: int, j: int) -> float:
    """SINR for pair (i, j) given a full U x B power matrix.  Interference
    sums all transmissions from other users at other SBSs (co-cell users are
    orthogonal)."""
    g = scenario.gains
    p = np.asarray(powers, dtype=float)
    mask = np.ones(p.shape, dtype=bool)
    mask[i, :] = False
    mask[:, j] = False
    interference = float(np.sum(p[mask] * np.broadcast_to(g[i], p.shape)[mask]))
    return float(p[i, j] * g[i, j] / (interference + scenario.radio.noise_power_w))


def sinr(scenario: Scenario, assignment: Assignment, i: int, j: int) -> float:
    if assignment.association[i, j] != 1:
        raise ValueError(f"user {i} is not associated with SBS {j}")
    return sinr_from_powers(scenario, assignment.tx_power_w, i, j)


def rate(scenario: Scenario, assignment: Assignment, i: int, j: int) -> float:
    """Shannon downlink rate in bps."""
    g = sinr(scenario, assignment, i, j)
    return scenario.radio.bandwidth_per_user_hz * math.log2(1.0 + g)


def rate_matrix(scenario: Scenario, assignment: Assignment) -> np.ndarray:
    """U x B rates on active pairs, 0 elsewhere."""
    rates = np.zeros_like(assignment.tx_power_w)
    for i in range(scenario.num_users):
        j = int(assignment.serving_sbs[i])
        rates[i, j] = rate(scenario, assignment, i, j)
    return rates


def backhaul_rate(scenario: Scenario, assignment: Assignment, i: int, j: int) -> float:
    """Expected backhaul rate of uncached files for user i at SBS j, using the
    per-file requirement rates (not achieved wireless rates)."""
    q = scenario.users[i].preferences
    y = assignment.placement[j]
    return float(np.sum(q * scenario.file_rates * (1 - y)))


def sbs_power(scenario: Scenario, assignment: Assignment, j: int) -> float:
    comp = _power_components(scenario, assignment, j)
    return comp["total"]


def _power_components(scenario: Scenario, assignment: Assignment, j: int) -> dict[str, float]:
    sbs = scenario.sbss[j]
    rho = scenario.radio.amplifier_factor
    tx = float(assignment.tx_power_w[:, j].sum())
    caching = sbs.cache_coeff_w_per_bit * float(
        np.sum(scenario.file_sizes * assignment.placement[j]))
    bh = sbs.backhaul_coeff_w_per_bps * sum(
        backhaul_rate(scenario, assignment, i, j)
        for i in range(scenario.num_users) if assignment.association[i, j])
    return {
        "transmit": tx,
        "caching": caching,
        "circuit": sbs.circuit_power_w,
        "backhaul": bh,
        "total": rho * tx + caching + sbs.circuit_power_w + bh,
    }


def _delay_components(scenario: Scenario, assignment: Assignment, i: int) -> dict[str, float]:
    j = int(assignment.serving_sbs[i])
    q = scenario.users[i].preferences
    r_ij = rate(scenario, assignment, i, j)
    if r_ij <= 0 and np.any(q > 0):
        return {"wireless": math.inf, "backhaul": 0.0, "total": math.inf}
    wireless = float(np.sum(q * scenario.file_sizes) / r_ij) if r_ij > 0 else 0.0
    bh = float(scenario.sbss[j].backhaul_delay_s
               * np.sum(q * (1 - assignment.placement[j])))
    return {"wireless": wireless, "backhaul": bh, "total": wireless + bh}


def user_delay(scenario: Scenario, assignment: Assignment, i: int) -> float:
    return _delay_components(scenario, assignment, i)["total"]


def objective(scenario: Scenario, assignment: Assignment,
              weights: ObjectiveWeights) -> float:
    """Weighted-sum objective: theta * delta_p * total power +
    (1 - theta) * delta_d * total delay."""
    f1, f2 = split_objective(scenario, assignment, weights)
    return f1 + f2


def split_objective(scenario: Scenario, assignment: Assignment,
                    weights: ObjectiveWeights) -> tuple[float, float]:
    """Decomposition into the power-control part F1 (transmit power and
    wireless delay) and the binary part F2 (caching/circuit/backhaul power
    and backhaul delay).  F1 + F2 equals the full objective exactly."""
    th, dp, dd = weights.theta, weights.delta_p, weights.delta_d
    rho = scenario.radio.amplifier_factor

    f1 = th * dp * rho * float(assignment.tx_power_w.sum())
    f2 = 0.0
    for j in range(scenario.num_sbs):
        comp = _power_components(scenario, assignment, j)
        f2 += th * dp * (comp["caching"] + comp["circuit"] + comp["backhaul"])
    for i in range(scenario.num_users):
        comp = _delay_components(scenario, assignment, i)
        f1 += (1 - th) * dd * comp["wireless"]
        f2 += (1 - th) * dd * comp["backhaul"]
    return f1, f2


def binary_objective(scenario: Scenario, x: np.ndarray, y: np.ndarray,
                     weights: ObjectiveWeights) -> float:
    """The part of the objective driven by association and placement alone:
    caching, circuit and backhaul power plus backhaul delay (F2).  Does not
    depend on transmit powers."""
    th, dp, dd = weights.theta, weights.delta_p, weights.delta_d
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    q = scenario.preferences
    sizes, rates = scenario.file_sizes, scenario.file_rates
    value = 0.0
    for j in range(scenario.num_sbs):
        sbs = scenario.sbss[j]
        caching = sbs.cache_coeff_w_per_bit * float(np.sum(sizes * y[j]))
        load = float(np.sum(x[:, j][:, None] * q * rates[None, :] * (1 - y[j])[None, :]))
        value += th * dp * (caching + sbs.circuit_power_w
                            + sbs.backhaul_coeff_w_per_bps * load)
        miss = float(np.sum(x[:, j][:, None] * q * (1 - y[j])[None, :]))
        value += (1 - th) * dd * sbs.backhaul_delay_s * miss
    return value


def backhaul_load(scenario: Scenario, x: np.ndarray, y: np.ndarray, j: int) -> float:
    """Aggregate backhaul rate demand at SBS j for the given binaries (bps)."""
    q = scenario.preferences
    return float(np.sum(np.asarray(x, dtype=float)[:, j][:, None] * q
                        * scenario.file_rates[None, :]
                        * (1 - np.asarray(y, dtype=float)[j])[None, :]))


def check_feasibility(scenario: Scenario, assignment: Assignment,
                      tol: float = CONSTRAINT_TOL) -> list[tuple[str, float]]:
    """Signed margins for every constraint; negative margin beyond ``tol``
    means violated.  Returns only the violations."""
    margins = constraint_margins(scenario, assignment)
    return [(name, m) for name, m in margins if m < -tol]


def constraint_margins(scenario: Scenario, assignment: Assignment) -> list[tuple[str, float]]:
    x, y, p = assignment.association, assignment.placement, assignment.tx_power_w
    out: list[tuple[str, float]] = []
    req = scenario.rate_requirements()
    rates = rate_matrix(scenario, assignment)

    for j in range(scenario.num_sbs):
        cap = scenario.sbss[j].max_tx_power_w
        out.append((f"power_cap[{j}]", cap - float((x[:, j] * p[:, j]).sum())))
    for i in range(scenario.num_users):
        out.append((f"rate_req[{i}]", float((x[i] * rates[i]).sum()) - req[i]))
    for j in range(scenario.num_sbs):
        used = float(np.sum(scenario.file_sizes * y[j]))
        out.append((f"cache_cap[{j}]", scenario.sbss[j].cache_capacity_bits - used))
    for j in range(scenario.num_sbs):
        load = sum(backhaul_rate(scenario, assignment, i, j)
                   for i in range(scenario.num_users) if x[i, j])
        out.append((f"backhaul_cap[{j}]", scenario.sbss[j].backhaul_capacity_bps - load))
    return out


def model_report(scenario: Scenario, assignment: Assignment,
                 weights: ObjectiveWeights) -> ModelReport:
    power = {key: np.array([_power_components(scenario, assignment, j)[key]
                            for j in range(scenario.num_sbs)])
             for key in ("transmit", "caching", "circuit", "backhaul", "total")}
    delay = {key: np.array([_delay_components(scenario, assignment, i)[key]
                            for i in range(scenario.num_users)])
             for key in ("wireless", "backhaul", "total")}
    return ModelReport(
        per_sbs_power_w=power,
        per_user_delay_s=delay,
        objective_value=objective(scenario, assignment, weights),
        constraint_violations=check_feasibility(scenario, assignment),
    )
