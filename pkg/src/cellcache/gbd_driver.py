"""Benders-style decomposition driver.

Alternates between the convex power subproblem (fixed binaries) and the
binary master (association + cache placement + the scalar under-estimator
``phi``).  Every subproblem evaluation produces a cut: a tight optimality cut
when the powers are feasible, a violation cut when only the power caps are
exceeded, and an exclusion cut when the rate requirements are unreachable.
The incumbent upper bound tracks the best feasible pair found so far; the
master optimum is a global lower bound, so the gap certifies optimality.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import convex_approx as ca
from . import master_solver as ms
from . import primal_solver as ps
from .exact_model import Assignment, ObjectiveWeights, objective
from .scenario import Scenario

__all__ = [
    "GbdConfig",
    "TraceRow",
    "GbdResult",
    "initial_association",
    "run_gbd",
    "run_apuf",
    "trace_to_csv",
]

STALL_LIMIT = 3


@dataclass(frozen=True)
class GbdConfig:
    epsilon: float = 1e-3
    max_iterations: int = 60
    master_mode: str = "exact"  # "exact" or "sdr"
    initial_association: str = "strongest_gain"  # or "random"
    seed: int = 0
    refit_rounds: int = 0  # extra passes re-anchoring the rate approximation
    enumeration_budget: int = 12
    sdr_samples: int = 64

    def __post_init__(self):
        if self.master_mode not in ("exact", "sdr"):
            raise ValueError(f"unknown master mode {self.master_mode!r}")
        if self.initial_association not in ("strongest_gain", "random"):
            raise ValueError(
                f"unknown initial association {self.initial_association!r}")
        if self.epsilon <= 0 or self.max_iterations < 1:
            raise ValueError("epsilon must be positive, max_iterations >= 1")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    upper_bound: float
    lower_bound: float
    primal_status: str  # feasible | infeasible
    cut_kind: str  # optimality | feasibility | no_good | none
    master_objective: float
    wall_ms: float = 0.0


@dataclass(frozen=True)
class GbdResult:
    status: str  # epsilon_optimal | iteration_limit | master_infeasible
    assignment: Assignment | None
    upper_bound: float  # surrogate objective of the incumbent
    lower_bound: float
    exact_objective: float  # unapproximated objective of the incumbent
    iterations: int
    trace: tuple[TraceRow, ...]
    cuts: tuple[ms.Cut, ...]
    approx_params: ca.ApproxParams = field(repr=False, default=None)


def initial_association(scenario: Scenario, strategy: str = "strongest_gain",
                        seed: int = 0) -> np.ndarray:
    u, b = scenario.num_users, scenario.num_sbs
    x = np.zeros((u, b), dtype=int)
    if strategy == "strongest_gain":
        x[np.arange(u), np.argmax(scenario.gains, axis=1)] = 1
    elif strategy == "random":
        rng = np.random.default_rng(seed)
        x[np.arange(u), rng.integers(0, b, size=u)] = 1
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return x


def _powers_from(sol: ps.PrimalSolution, x: np.ndarray) -> np.ndarray:
    return np.exp(sol.log_powers.values) * np.asarray(x)


def _run_single(scenario: Scenario, weights: ObjectiveWeights,
                config: GbdConfig, params: ca.ApproxParams,
                x0: np.ndarray) -> GbdResult:
    pair_bounds = ms.pair_cost_bounds(scenario, params, weights)
    memo: dict[bytes, object] = {}
    cuts: list[ms.Cut] = []
    trace: list[TraceRow] = []
    upper = math.inf
    lower = -math.inf
    best: Assignment | None = None

    x = np.asarray(x0, dtype=int)
    y, f2 = ms.best_placement(scenario, x, weights)
    stalls = 0
    status = "iteration_limit"
    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        key = x.tobytes()
        seen = key in memo
        if not seen:
            memo[key] = ps.solve_primal(scenario, params, x, y, weights)
        sub = memo[key]

        cut_kind = "none"
        if isinstance(sub, ps.PrimalSolution):
            primal_status = "feasible"
            if not seen:
                cuts.append(ms.make_optimality_cut(x, sub.objective, pair_bounds))
                cut_kind = "optimality"
            candidate = sub.objective + f2
            if candidate < upper:
                upper = candidate
                best = Assignment(association=x, placement=y,
                                  tx_power_w=_powers_from(sub, x))
        else:
            primal_status = "infeasible"
            try:
                cert = ps.solve_feasibility(scenario, params, x, y)
            except ps.HardInfeasible:
                cert = None
            if cert is not None and cert.eta > ms.CUT_TOL:
                if not seen:
                    cuts.append(ms.make_feasibility_cut(scenario, x, cert))
                    cut_kind = "feasibility"
            else:
                if not seen:
                    cuts.append(ms.make_no_good_cut(x))
                    cut_kind = "no_good"

        try:
            if config.master_mode == "sdr":
                sdr = ms.solve_sdr(scenario, weights, cuts)
                master = ms.round_sdr(scenario, weights, cuts, sdr,
                                      seed=config.seed + iteration,
                                      num_samples=config.sdr_samples)
                if master is None:
                    master = ms.solve_master_exact(
                        scenario, weights, cuts,
                        enumeration_budget=config.enumeration_budget)
                lower = max(lower, sdr.lower_bound)
            else:
                master = ms.solve_master_exact(
                    scenario, weights, cuts,
                    enumeration_budget=config.enumeration_budget)
                lower = max(lower, master.objective)
        except ms.MasterInfeasible:
            status = "master_infeasible"
            trace.append(TraceRow(iteration, upper, lower, primal_status,
                                  cut_kind, math.nan))
            break

        trace.append(TraceRow(iteration, upper, lower, primal_status,
                              cut_kind, master.objective))
        if upper - lower <= config.epsilon:
            status = "epsilon_optimal"
            break

        nxt = master.association
        if nxt.tobytes() in memo:
            stalls += 1
            if stalls >= STALL_LIMIT:
                status = "iteration_limit"
                break
        else:
            stalls = 0
        x, y, f2 = nxt, master.placement, master.objective - master.phi

    exact = objective(scenario, best, weights) if best is not None else math.inf
    return GbdResult(status=status, assignment=best, upper_bound=upper,
                     lower_bound=lower, exact_objective=exact,
                     iterations=iteration, trace=tuple(trace),
                     cuts=tuple(cuts), approx_params=params)


def run_gbd(scenario: Scenario, weights: ObjectiveWeights,
            config: GbdConfig | None = None) -> GbdResult:
    """Run the decomposition to an epsilon-certified optimum of the
    approximated problem.

    With ``refit_rounds > 0`` the rate approximation is re-anchored at the
    incumbent powers after each converged pass and the decomposition is rerun
    from scratch (cuts are only valid for the approximation that produced
    them); the final pass's result is returned.
    """
    config = config or GbdConfig()
    params = ca.fit_params(scenario, ca.default_anchor_powers(scenario))
    x0 = initial_association(scenario, config.initial_association, config.seed)
    result = _run_single(scenario, weights, config, params, x0)
    for _ in range(config.refit_rounds):
        if result.assignment is None:
            break
        powers = np.where(result.assignment.tx_power_w > 0,
                          result.assignment.tx_power_w,
                          ca.default_anchor_powers(scenario))
        params = ca.fit_params(scenario, powers)
        result = _run_single(scenario, weights, config, params,
                             result.assignment.association)
    return result


def run_apuf(scenario: Scenario, weights: ObjectiveWeights,
             config: GbdConfig | None = None) -> GbdResult:
    """Accelerated variant: same loop with the SDR master."""
    config = config or GbdConfig()
    if config.master_mode != "sdr":
        config = GbdConfig(epsilon=config.epsilon,
                           max_iterations=config.max_iterations,
                           master_mode="sdr",
                           initial_association=config.initial_association,
                           seed=config.seed, refit_rounds=config.refit_rounds,
                           enumeration_budget=config.enumeration_budget,
                           sdr_samples=config.sdr_samples)
    return run_gbd(scenario, weights, config)


def trace_to_csv(result: GbdResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "ub", "lb", "primal_status", "cut_kind",
                         "master_obj", "wall_ms"])
        for row in result.trace:
            writer.writerow([row.iteration, f"{row.upper_bound:.12g}",
                             f"{row.lower_bound:.12g}", row.primal_status,
                             row.cut_kind, f"{row.master_objective:.12g}",
                             f"{row.wall_ms:g}"])