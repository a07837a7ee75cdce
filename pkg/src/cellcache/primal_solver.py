"""Convex power-control subproblem for fixed binaries.

For a fixed association/placement the surrogate objective is convex in the
log powers; we solve it with a conic interior-point solver (Clarabel, SCS
fallback), extract the multipliers of the per-pair power-cap constraints, and
certify the KKT conditions ourselves.  When the subproblem is infeasible, a
constraint-violation problem produces the normalized multipliers used for
feasibility cuts.

Off pairs are pinned to a tiny power floor so log variables stay finite;
their contribution to interference and objective is below every tolerance in
use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.optimize

from . import convex_approx as ca
from .convex_approx import POWER_FLOOR_W, ApproxParams, LogPower
from .exact_model import ObjectiveWeights
from .scenario import Scenario

__all__ = [
    "PrimalSolution",
    "Infeasible",
    "FeasibilityCertificate",
    "PrimalSolverError",
    "HardInfeasible",
    "solve_primal",
    "dual_value",
    "solve_feasibility",
]

LN2 = math.log(2.0)
LOG_FLOOR = math.log(POWER_FLOOR_W)
KKT_TOL = 1e-6

_SOLVER_ATTEMPTS = (
    {"solver": cp.CLARABEL},
    {"solver": cp.CLARABEL, "tol_gap_abs": 1e-11, "tol_gap_rel": 1e-11,
     "tol_feas": 1e-11, "max_iter": 500},
    {"solver": cp.SCS, "eps": 1e-10, "max_iters": 100_000},
)

_INFEASIBLE_STATUSES = {cp.INFEASIBLE, "infeasible_inaccurate"}


class PrimalSolverError(RuntimeError):
    pass


class HardInfeasible(Exception):
    """Rate requirements unsatisfiable at any power for this association."""


@dataclass(frozen=True)
class Infeasible:
    message: str = "no strictly feasible power profile exists"


@dataclass(frozen=True)
class PrimalSolution:
    log_powers: LogPower  # U x B, off pairs at the floor
    objective: float  # surrogate power-control objective value
    duals_mu: np.ndarray  # U x B, per-pair power-cap multipliers
    kkt_residual: float
    duals_budget: np.ndarray  # per-SBS total-power multipliers
    duals_rate: np.ndarray  # per-user rate-requirement multipliers (scaled by 1/W)


@dataclass(frozen=True)
class FeasibilityCertificate:
    eta: float  # maximum power-cap violation (watts)
    log_powers: LogPower
    duals_nu: np.ndarray  # U x B, nonnegative, sums to 1


def _active_pairs(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=int)
    if np.any(x.sum(axis=1) != 1):
        raise ValueError("association must assign each user exactly one SBS")
    return np.argmax(x, axis=1)


def _floor_interference(scenario: Scenario, x: np.ndarray) -> np.ndarray:
    """Per-pair constant term: noise plus leakage from floored (off) pairs."""
    pf = np.where(np.asarray(x) == 1, 0.0, POWER_FLOOR_W)
    return ca.interference_matrix(scenario, pf)


def _rate_exprs(scenario: Scenario, params: ApproxParams, serving: np.ndarray,
                pt: cp.Variable, const_interf: np.ndarray) -> list[cp.Expression]:
    """Bandwidth-normalized surrogate rate expression per user (concave)."""
    g = scenario.gains
    exprs = []
    for i, j in enumerate(serving):
        terms = [pt[m] + math.log(g[i, serving[m]])
                 for m in range(len(serving)) if m != i and serving[m] != j]
        terms.append(cp.Constant(math.log(const_interf[i, j])))
        lse = cp.log_sum_exp(cp.hstack(terms)) if len(terms) > 1 else terms[0]
        snr_log2 = (pt[i] + math.log(g[i, j]) - lse) / LN2
        exprs.append(params.alpha[i, j] * snr_log2 + params.beta[i, j])
    return exprs


def _assemble_log_powers(x: np.ndarray, serving: np.ndarray,
                         pt_values: np.ndarray) -> np.ndarray:
    full = np.full(np.asarray(x).shape, LOG_FLOOR)
    for i, j in enumerate(serving):
        full[i, j] = pt_values[i]
    return full


def _try_solve(problem: cp.Problem) -> str:
    last_exc = None
    for kwargs in _SOLVER_ATTEMPTS:
        try:
            problem.solve(**kwargs)
        except (cp.SolverError, Exception) as exc:  # solver-level blowups
            last_exc = exc
            continue
        if problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or \
                problem.status in _INFEASIBLE_STATUSES:
            return problem.status
    if last_exc is not None and problem.status is None:
        raise PrimalSolverError(f"all solvers failed: {last_exc}")
    return problem.status or "failed"


def solve_primal(scenario: Scenario, params: ApproxParams, x: np.ndarray,
                 y: np.ndarray, weights: ObjectiveWeights,
                 kkt_tol: float = KKT_TOL) -> PrimalSolution | Infeasible:
    """Minimize the surrogate power objective at fixed binaries.

    Returns a KKT-certified solution or an ``Infeasible`` marker when no
    power profile satisfies the rate requirements within the power caps.
    The placement ``y`` does not enter the subproblem; it is accepted for
    interface symmetry.
    """
    del y
    serving = _active_pairs(x)
    u = scenario.num_users
    w = scenario.radio.bandwidth_per_user_hz
    caps = scenario.max_powers
    req = scenario.rate_requirements() / w
    const_interf = _floor_interference(scenario, x)
    th, dp, dd = weights.theta, weights.delta_p, weights.delta_d
    rho = scenario.radio.amplifier_factor
    sbits = scenario.preferences @ scenario.file_sizes

    pt = cp.Variable(u)
    rates = _rate_exprs(scenario, params, serving, pt, const_interf)

    floor_power = POWER_FLOOR_W * (scenario.num_sbs * u - u)
    obj = th * dp * rho * (cp.sum(cp.exp(pt)) + floor_power)
    if th < 1.0:
        obj = obj + (1 - th) * dd * cp.sum(
            cp.hstack([(sbits[i] / w) * cp.inv_pos(rates[i]) for i in range(u)]))

    cons_cap = [cp.exp(pt[i]) <= caps[serving[i]] for i in range(u)]
    cons_budget = []
    budget_sbs = []
    for j in range(scenario.num_sbs):
        users_j = [i for i in range(u) if serving[i] == j]
        if not users_j:
            continue
        slack = caps[j] - POWER_FLOOR_W * (u - len(users_j))
        cons_budget.append(cp.sum(cp.hstack([cp.exp(pt[i]) for i in users_j])) <= slack)
        budget_sbs.append(j)
    cons_rate = [rates[i] >= req[i] for i in range(u)]
    cons_floor = [pt >= LOG_FLOOR]

    problem = cp.Problem(cp.Minimize(obj),
                         cons_cap + cons_budget + cons_rate + cons_floor)

    best: PrimalSolution | None = None
    last_exc: Exception | None = None
    for kwargs in _SOLVER_ATTEMPTS:
        try:
            problem.solve(**kwargs)
        except Exception as exc:
            last_exc = exc
            continue
        if problem.status in _INFEASIBLE_STATUSES:
            return Infeasible()
        if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            continue

        pt_val = np.asarray(pt.value, dtype=float).reshape(-1)
        full = _assemble_log_powers(x, serving, pt_val)
        mu = np.zeros_like(scenario.gains)
        for i, j in enumerate(serving):
            mu[i, j] = max(float(cons_cap[i].dual_value), 0.0)
        lam = np.zeros(scenario.num_sbs)
        for c, j in zip(cons_budget, budget_sbs):
            lam[j] = max(float(c.dual_value), 0.0)
        kappa = np.array([max(float(c.dual_value), 0.0) for c in cons_rate])
        phi_floor = np.maximum(
            np.asarray(cons_floor[0].dual_value).reshape(-1), 0.0)

        f1 = ca.f1_surrogate(scenario, params, x, full, weights)
        residual = _kkt_residual(scenario, params, x, serving, full, weights,
                                 mu, lam, kappa, phi_floor, const_interf, req)
        if residual > kkt_tol:
            refined = _refine_primal(scenario, params, x, serving, pt_val,
                                     weights, const_interf, req)
            candidates = [pt_val] if refined is None else [refined, pt_val]
            for cand in candidates:
                cand_full = _assemble_log_powers(x, serving, cand)
                polished = _polish_duals(scenario, params, x, serving,
                                         cand_full, weights, const_interf, req)
                if polished is None:
                    continue
                mu_p, lam_p, kappa_p, phi_p = polished
                res_p = _kkt_residual(scenario, params, x, serving, cand_full,
                                      weights, mu_p, lam_p, kappa_p, phi_p,
                                      const_interf, req)
                if res_p < residual:
                    full = cand_full
                    f1 = ca.f1_surrogate(scenario, params, x, full, weights)
                    mu, lam, kappa, residual = mu_p, lam_p, kappa_p, res_p
        sol = PrimalSolution(log_powers=LogPower(full), objective=f1,
                             duals_mu=mu, kkt_residual=residual,
                             duals_budget=lam, duals_rate=kappa)
        if residual <= kkt_tol:
            return sol
        if best is None or residual < best.kkt_residual:
            best = sol
    if best is not None:
        raise PrimalSolverError(
            f"KKT residual {best.kkt_residual:.2e} exceeds tolerance "
            f"{kkt_tol:.2e}")
    raise PrimalSolverError(f"primal solve failed: {last_exc or problem.status}")


def _rate_jacobian(scenario: Scenario, params: ApproxParams,
                   serving: np.ndarray, pt_val: np.ndarray,
                   const_interf: np.ndarray) -> np.ndarray:
    """d(normalized rate_m)/d(pt_i) for active users."""
    u = len(serving)
    g = scenario.gains
    jac = np.zeros((u, u))
    for m, jm in enumerate(serving):
        interf = const_interf[m, jm] + sum(
            math.exp(pt_val[i]) * g[m, serving[i]]
            for i in range(u) if i != m and serving[i] != jm)
        alpha = params.alpha[m, jm]
        jac[m, m] = alpha / LN2
        for i, ji in enumerate(serving):
            if i != m and ji != jm:
                jac[m, i] = -alpha / LN2 * math.exp(pt_val[i]) * g[m, ji] / interf
    return jac


def _refine_primal(scenario, params, x, serving, pt_val, weights,
                   const_interf, req) -> np.ndarray | None:
    """Sharpen a solver iterate with a bounded quasi-Newton pass.

    Conic solvers stop with gradients around their own tolerance; when the
    KKT check needs more, a sequential-quadratic pass on the analytic
    objective with the budget and rate constraints closes the gap.  The
    per-pair caps and the power floor become box bounds.
    """
    u = len(serving)
    caps = scenario.max_powers
    w_hz = scenario.radio.bandwidth_per_user_hz

    def fun(pt):
        full = _assemble_log_powers(x, serving, pt)
        val = ca.f1_surrogate(scenario, params, x, full, weights)
        grad_full = ca.f1_surrogate_gradient(scenario, params, x, full, weights)
        grad = np.array([grad_full[i, j] for i, j in enumerate(serving)])
        return val, grad

    constraints = []
    for j in range(scenario.num_sbs):
        users_j = [i for i in range(u) if serving[i] == j]
        if not users_j:
            continue
        slack = caps[j] - POWER_FLOOR_W * (u - len(users_j))

        def budget(pt, users_j=users_j, slack=slack):
            return slack - np.exp(pt[users_j]).sum()

        def budget_jac(pt, users_j=users_j):
            row = np.zeros(u)
            row[users_j] = -np.exp(pt[users_j])
            return row

        constraints.append({"type": "ineq", "fun": budget, "jac": budget_jac})

    def rate_margin(pt):
        full = _assemble_log_powers(x, serving, pt)
        rates = ca.approx_rate_matrix(scenario, params, full)
        return np.array([rates[i, j] for i, j in enumerate(serving)]
                        ) / w_hz - req

    constraints.append({
        "type": "ineq", "fun": rate_margin,
        "jac": lambda pt: _rate_jacobian(scenario, params, serving, pt,
                                         const_interf)})

    bounds = [(LOG_FLOOR, math.log(caps[j])) for j in serving]
    try:
        res = scipy.optimize.minimize(
            fun, pt_val, jac=True, method="SLSQP", bounds=bounds,
            constraints=constraints,
            options={"maxiter": 300, "ftol": 1e-14})
    except Exception:
        return None
    pt_new = np.asarray(res.x, dtype=float)

    if np.any(rate_margin(pt_new) < -1e-12):
        return None
    p_new = np.exp(pt_new)
    for j in range(scenario.num_sbs):
        users_j = [i for i in range(u) if serving[i] == j]
        if users_j and p_new[users_j].sum() > caps[j] + 1e-15:
            return None
    return pt_new


def _polish_duals(scenario, params, x, serving, full_log_powers, weights,
                  const_interf, req, active_tol: float = 1e-5):
    """Refit the multipliers at a fixed primal point.

    Stationarity is linear in the multipliers, so the best certificate for a
    given point is a nonnegative least-squares fit over the constraints that
    are active there; inactive constraints keep zero multipliers, which makes
    complementary slackness exact.  Returns None when the fit degenerates.
    """
    u = len(serving)
    pt_val = np.array([full_log_powers[i, j] for i, j in enumerate(serving)])
    p_val = np.exp(pt_val)
    caps = scenario.max_powers

    grad_f1 = ca.f1_surrogate_gradient(scenario, params, x, full_log_powers,
                                       weights)
    grad_active = np.array([grad_f1[i, j] for i, j in enumerate(serving)])
    jac = _rate_jacobian(scenario, params, serving, pt_val, const_interf)
    rates = ca.approx_rate_matrix(scenario, params, full_log_powers)
    rate_norm = np.array([rates[i, j] for i, j in enumerate(serving)]
                         ) / scenario.radio.bandwidth_per_user_hz

    columns: list[np.ndarray] = []
    tags: list[tuple[str, int]] = []
    for i in range(u):
        if caps[serving[i]] - p_val[i] <= active_tol * (1.0 + caps[serving[i]]):
            col = np.zeros(u)
            col[i] = p_val[i]
            columns.append(col)
            tags.append(("mu", i))
    for j in range(scenario.num_sbs):
        users_j = [i for i in range(u) if serving[i] == j]
        if users_j and caps[j] - p_val[users_j].sum() <= active_tol * (1.0 + caps[j]):
            col = np.zeros(u)
            col[users_j] = p_val[users_j]
            columns.append(col)
            tags.append(("lam", j))
    for i in range(u):
        if rate_norm[i] - req[i] <= active_tol * (1.0 + req[i]):
            columns.append(-jac[i, :])
            tags.append(("kappa", i))
    for i in range(u):
        if pt_val[i] - LOG_FLOOR <= active_tol:
            col = np.zeros(u)
            col[i] = -1.0
            columns.append(col)
            tags.append(("phi", i))
    mu = np.zeros_like(scenario.gains)
    lam = np.zeros(scenario.num_sbs)
    kappa = np.zeros(u)
    phi = np.zeros(u)
    if not columns:
        # Interior point: the only valid certificate is zero multipliers.
        return mu, lam, kappa, phi

    a = np.column_stack(columns)
    try:
        t, _ = scipy.optimize.nnls(a, -grad_active)
    except Exception:
        return None

    for (kind, idx), val in zip(tags, t):
        if kind == "mu":
            mu[idx, serving[idx]] = val
        elif kind == "lam":
            lam[idx] = val
        elif kind == "kappa":
            kappa[idx] = val
        else:
            phi[idx] = val
    return mu, lam, kappa, phi


def _kkt_residual(scenario, params, x, serving, full_log_powers, weights,
                  mu, lam, kappa, phi_floor, const_interf, req) -> float:
    u = len(serving)
    pt_val = np.array([full_log_powers[i, j] for i, j in enumerate(serving)])
    p_val = np.exp(pt_val)
    caps = scenario.max_powers

    grad_f1 = ca.f1_surrogate_gradient(scenario, params, x, full_log_powers, weights)
    grad_active = np.array([grad_f1[i, j] for i, j in enumerate(serving)])
    jac = _rate_jacobian(scenario, params, serving, pt_val, const_interf)
    mu_active = np.array([mu[i, j] for i, j in enumerate(serving)])
    lam_active = np.array([lam[j] for j in serving])

    stationarity = (grad_active + (mu_active + lam_active) * p_val
                    - jac.T @ kappa - phi_floor)
    scale = 1.0 + float(np.max(np.abs(grad_active)))
    res = float(np.max(np.abs(stationarity))) / scale

    rates = ca.approx_rate_matrix(scenario, params, full_log_powers)
    rate_active = np.array([rates[i, j] for i, j in enumerate(serving)])
    rate_norm = rate_active / scenario.radio.bandwidth_per_user_hz

    # Primal feasibility (scaled) and complementary slackness.
    cap_slack = np.array([caps[j] for j in serving]) - p_val
    res = max(res, float(np.max(-cap_slack / (1.0 + caps[serving]).max(), initial=0.0)))
    res = max(res, float(np.max(req - rate_norm, initial=0.0) / (1.0 + np.max(req))))
    for j in range(scenario.num_sbs):
        users_j = [i for i in range(u) if serving[i] == j]
        if users_j:
            overflow = p_val[users_j].sum() - caps[j]
            res = max(res, overflow / (1.0 + caps[j]))
    obj_scale = 1.0 + abs(float(grad_active @ np.ones(u)))
    res = max(res, float(np.max(np.abs(mu_active * cap_slack))) / obj_scale)
    res = max(res, float(np.max(np.abs(kappa * (rate_norm - req)))) / obj_scale)
    return res


def dual_value(scenario: Scenario, params: ApproxParams, x: np.ndarray,
               solution: PrimalSolution) -> float:
    """Lagrangian value at the solution; equals the primal optimum by strong
    duality (the power-cap terms vanish by complementary slackness)."""
    caps = scenario.max_powers
    powers = np.exp(solution.log_powers.values)
    slack = powers - np.asarray(x, dtype=float) * caps[None, :]
    return solution.objective + float(np.sum(solution.duals_mu * slack))


def solve_feasibility(scenario: Scenario, params: ApproxParams, x: np.ndarray,
                      y: np.ndarray) -> FeasibilityCertificate:
    """Minimize the largest per-pair power-cap violation subject to the rate
    requirements.

    The per-SBS total-power budget is dropped here: keeping it would make
    this problem infeasible exactly when the primal is, leaving nothing to
    certify.  Relaxing only the per-pair caps yields the violation magnitude
    and the normalized multipliers (summing to 1) for the feasibility cut.
    Raises ``HardInfeasible`` when the rate requirements cannot be met at any
    power level.
    """
    del y
    serving = _active_pairs(x)
    u = scenario.num_users
    w = scenario.radio.bandwidth_per_user_hz
    caps = scenario.max_powers
    req = scenario.rate_requirements() / w
    const_interf = _floor_interference(scenario, x)

    pt = cp.Variable(u)
    eta = cp.Variable()
    rates = _rate_exprs(scenario, params, serving, pt, const_interf)

    cons_cap = [cp.exp(pt[i]) - caps[serving[i]] <= eta for i in range(u)]
    # Off pairs sit at the floor; their cap is zero, so they bound eta by a
    # constant and keep the multiplier normalization exact.
    num_off = scenario.num_sbs * u - u
    cons_off = [POWER_FLOOR_W <= eta] if num_off else []
    cons_rate = [rates[i] >= req[i] for i in range(u)]
    cons_cap_upper = [pt <= np.log(caps[serving]) + 30.0]  # keeps eta bounded

    problem = cp.Problem(cp.Minimize(eta),
                         cons_cap + cons_off + cons_rate + cons_cap_upper)
    status = _try_solve(problem)
    if status in _INFEASIBLE_STATUSES:
        raise HardInfeasible(
            "rate requirements unsatisfiable at any power for this association")
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise PrimalSolverError(f"feasibility solve failed with status {status}")

    pt_val = np.asarray(pt.value, dtype=float).reshape(-1)
    full = _assemble_log_powers(x, serving, pt_val)
    nu = np.zeros_like(scenario.gains)
    for i, j in enumerate(serving):
        nu[i, j] = max(float(cons_cap[i].dual_value), 0.0)
    if cons_off:
        # The constant floor constraints share one multiplier; spread it over
        # the off pairs uniformly (any split is a valid dual).
        off_dual = max(float(cons_off[0].dual_value), 0.0)
        off_mask = np.asarray(x) == 0
        nu[off_mask] = off_dual / num_off
    total = nu.sum()
    if total <= 0:
        raise PrimalSolverError("degenerate feasibility duals")
    nu = nu / total
    return FeasibilityCertificate(eta=max(float(eta.value), 0.0),
                                  log_powers=LogPower(full), duals_nu=nu)
