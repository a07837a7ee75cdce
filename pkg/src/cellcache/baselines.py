"""Reference policies and the brute-force oracle.

The oracle enumerates every association (placements are optimized exactly
per association) and solves the convex power subproblem for each, so it
recovers the global optimum of the approximated problem on desk-scale
instances.  The two reference policies bracket the trade-off: a
cache-popular/power-thrifty policy and a delay-first policy, both useful as
comparison points for the decomposition.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import convex_approx as ca
from . import master_solver as ms
from . import primal_solver as ps
from .exact_model import (Assignment, ObjectiveWeights, check_feasibility,
                          model_report, objective)
from .gbd_driver import initial_association
from .scenario import Scenario

__all__ = [
    "PolicyResult",
    "OracleResult",
    "ccp_policy",
    "df_policy",
    "exhaustive_oracle",
]

ENUMERATION_BUDGET = 12


@dataclass(frozen=True)
class PolicyResult:
    name: str
    assignment: Assignment
    objective: float  # exact weighted objective at the policy's theta
    total_power_w: float
    total_delay_s: float
    feasible: bool
    violations: tuple[str, ...]


def _finish(name: str, scenario: Scenario, weights: ObjectiveWeights,
            assignment: Assignment) -> PolicyResult:
    report = model_report(scenario, assignment, weights)
    violations = tuple(sorted(check_feasibility(scenario, assignment)))
    return PolicyResult(
        name=name,
        assignment=assignment,
        objective=report.objective_value,
        total_power_w=float(report.per_sbs_power_w["total"].sum()),
        total_delay_s=float(report.per_user_delay_s["total"].sum()),
        feasible=not violations,
        violations=violations,
    )


def _even_split_powers(scenario: Scenario, x: np.ndarray) -> np.ndarray:
    counts = x.sum(axis=0)
    powers = np.zeros_like(scenario.gains)
    for j in range(scenario.num_sbs):
        if counts[j]:
            powers[:, j] = x[:, j] * (scenario.max_powers[j] / counts[j])
    return powers


def _popularity_placement(scenario: Scenario) -> np.ndarray:
    """Identical placement at every SBS: greedily cache the globally most
    demanded files that still fit."""
    popularity = scenario.preferences.sum(axis=0)
    order = np.argsort(-popularity, kind="stable")
    row = np.zeros(scenario.num_files, dtype=int)
    used = 0.0
    cap = min(s.cache_capacity_bits for s in scenario.sbss)
    for k in order:
        if used + scenario.file_sizes[k] <= cap + 1e-9:
            row[k] = 1
            used += scenario.file_sizes[k]
    return np.tile(row, (scenario.num_sbs, 1))


def ccp_policy(scenario: Scenario, weights: ObjectiveWeights) -> PolicyResult:
    """Cache-popular, power-thrifty reference: every SBS caches the same
    globally popular files, users attach to their strongest SBS, and transmit
    powers are the cheapest ones meeting the rate requirements.  Falls back
    to an even power split when no power profile satisfies the requirements.
    """
    x = initial_association(scenario, "strongest_gain")
    y = _popularity_placement(scenario)
    params = ca.fit_params(scenario, ca.default_anchor_powers(scenario))
    min_power = ObjectiveWeights(theta=1.0, delta_p=weights.delta_p,
                                 delta_d=weights.delta_d)
    try:
        sol = ps.solve_primal(scenario, params, x, y, min_power)
    except ps.PrimalSolverError:
        sol = ps.Infeasible()
    if isinstance(sol, ps.PrimalSolution):
        powers = np.exp(sol.log_powers.values) * x
    else:
        powers = _even_split_powers(scenario, x)
    assignment = Assignment(association=x, placement=y, tx_power_w=powers)
    return _finish("ccp", scenario, weights, assignment)


def df_policy(scenario: Scenario, weights: ObjectiveWeights,
              enumeration_budget: int = ENUMERATION_BUDGET) -> PolicyResult:
    """Delay-first reference: enumerate associations with full-power even
    splits, place caches to minimize backhaul delay, and keep the pair with
    the smallest total delay."""
    u, b = scenario.num_users, scenario.num_sbs
    if u * b > enumeration_budget:
        raise ValueError(f"problem size {u}x{b} exceeds enumeration budget")
    delay_only = ObjectiveWeights(theta=0.0, delta_p=weights.delta_p,
                                  delta_d=1.0)
    best = None
    for serving in itertools.product(range(b), repeat=u):
        x = np.zeros((u, b), dtype=int)
        x[np.arange(u), serving] = 1
        try:
            y, _ = ms.best_placement(scenario, x, delay_only)
        except ms.MasterInfeasible:
            continue
        assignment = Assignment(association=x, placement=y,
                                tx_power_w=_even_split_powers(scenario, x))
        report = model_report(scenario, assignment, delay_only)
        delay = float(report.per_user_delay_s["total"].sum())
        if best is None or delay < best[0] - 1e-12:
            best = (delay, assignment)
    if best is None:
        raise ms.MasterInfeasible("no placement satisfies the capacities")
    return _finish("df", scenario, weights, best[1])


@dataclass(frozen=True)
class OracleResult:
    assignment: Assignment
    objective: float  # surrogate power cost + binary cost at the optimum
    evaluated: int  # associations with a feasible power subproblem
    skipped: int  # associations without one


def exhaustive_oracle(scenario: Scenario, weights: ObjectiveWeights,
                      params: ca.ApproxParams | None = None,
                      enumeration_budget: int = ENUMERATION_BUDGET
                      ) -> OracleResult:
    """Global optimum of the approximated problem by enumeration of the
    binaries with a convex power solve per association."""
    u, b = scenario.num_users, scenario.num_sbs
    if u * b > enumeration_budget:
        raise ValueError(f"problem size {u}x{b} exceeds enumeration budget")
    if params is None:
        params = ca.fit_params(scenario, ca.default_anchor_powers(scenario))
    best = None
    evaluated = skipped = 0
    for serving in itertools.product(range(b), repeat=u):
        x = np.zeros((u, b), dtype=int)
        x[np.arange(u), serving] = 1
        try:
            y, f2 = ms.best_placement(scenario, x, weights)
        except ms.MasterInfeasible:
            skipped += 1
            continue
        try:
            sol = ps.solve_primal(scenario, params, x, y, weights)
        except (ps.PrimalSolverError, ps.HardInfeasible):
            skipped += 1
            continue
        if not isinstance(sol, ps.PrimalSolution):
            skipped += 1
            continue
        evaluated += 1
        total = sol.objective + f2
        if best is None or total < best[0] - 1e-12:
            powers = np.exp(sol.log_powers.values) * x
            best = (total, Assignment(association=x, placement=y,
                                      tx_power_w=powers))
    if best is None:
        raise ms.MasterInfeasible("no association admits feasible powers")
    return OracleResult(assignment=best[1], objective=best[0],
                        evaluated=evaluated, skipped=skipped)


def policy_objective(scenario: Scenario, result: PolicyResult,
                     weights: ObjectiveWeights) -> float:
    """Exact weighted objective of a policy under different weights."""
    return objective(scenario, result.assignment, weights)