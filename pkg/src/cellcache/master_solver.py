"""Master problem over the binary association/placement variables.

The master collects cuts generated from the power subproblem and picks the
next association ``x`` (users x SBSs) and cache placement ``y`` (SBSs x
files) minimizing ``phi + F2``, where ``phi`` underestimates the optimal
power-control cost and ``F2`` gathers every term that depends only on the
binaries (caching/backhaul power, circuit power, backhaul delay).

Two interchangeable masters are provided:

* an exact one that enumerates associations (placements decompose per SBS
  and are enumerated exactly as well), and
* a semidefinite relaxation of the same mixed-binary quadratic program with
  Gaussian randomized rounding, which scales past the enumeration budget.

Optimality cuts are built from per-pair cost lower bounds.  For each pair
(i, j) we bound, ignoring cross-interference, the cheapest way user i can be
served by SBS j within its power cap while meeting its rate requirement.
The sum of these bounds under-estimates the subproblem cost at every
association, and lifting the cut at the association actually evaluated makes
it tight there, so the decomposition converges to the true optimum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize_scalar

from . import convex_approx as ca
from .convex_approx import ApproxParams
from .exact_model import ObjectiveWeights, binary_objective
from .primal_solver import FeasibilityCertificate
from .scenario import Scenario

__all__ = [
    "Cut",
    "cut_value",
    "pair_cost_bounds",
    "make_optimality_cut",
    "make_feasibility_cut",
    "make_no_good_cut",
    "MasterSolution",
    "MasterInfeasible",
    "best_placement",
    "solve_master_exact",
    "SdrSolution",
    "solve_sdr",
    "round_sdr",
    "cuts_to_csv",
]

INFEASIBLE_PAIR_COST = 1e8
CUT_SLACK = 1e-9
CUT_TOL = 1e-9
SDR_MAX_DIM = 64


@dataclass(frozen=True)
class Cut:
    """Affine function of the association, ``const_term + sum(x_coeffs * x)``.

    * ``optimality``: lower-bounds the subproblem cost, ``phi >= value(x)``.
    * ``feasibility`` / ``no_good``: exclude associations with ``value(x) > 0``.
    """

    kind: str
    const_term: float
    x_coeffs: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("optimality", "feasibility", "no_good"):
            raise ValueError(f"unknown cut kind {self.kind!r}")
        coeffs = np.asarray(self.x_coeffs, dtype=float)
        coeffs.setflags(write=False)
        object.__setattr__(self, "x_coeffs", coeffs)


def cut_value(cut: Cut, x: np.ndarray) -> float:
    return cut.const_term + float(np.sum(cut.x_coeffs * np.asarray(x)))


def _pair_cost(a: float, b: float, alpha: float, beta: float, w: float,
               g: float, noise: float, req: float, pmax: float) -> float:
    """min over p in [p_min, pmax] of a*p + b / rate0(p), interference-free.

    rate0(p) = w * (alpha * log2(p * g / noise) + beta); p_min solves
    rate0(p_min) = req.  Returns INFEASIBLE_PAIR_COST when even the cap
    cannot meet the requirement.
    """
    # p_min from alpha*log2(p g / noise) + beta = req / w
    log2_pmin = (req / w - beta) / alpha - math.log2(g / noise)
    if log2_pmin > math.log2(pmax) + 1e-12:
        return INFEASIBLE_PAIR_COST
    pmin = min(2.0 ** log2_pmin, pmax)
    c1 = w * alpha / math.log(2.0)
    c0 = w * (alpha * math.log2(g / noise) + beta)

    def cost(u: float) -> float:
        rate = c1 * u + c0
        if rate <= 0:
            return INFEASIBLE_PAIR_COST
        return a * math.exp(u) + b / rate

    lo, hi = math.log(max(pmin, 1e-300)), math.log(pmax)
    if b == 0.0:
        return cost(lo)
    if a == 0.0 or hi - lo < 1e-12:
        return cost(hi)
    res = minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return min(float(res.fun), cost(lo), cost(hi))


def pair_cost_bounds(scenario: Scenario, params: ApproxParams,
                     weights: ObjectiveWeights) -> np.ndarray:
    """Per-pair lower bounds on the power-control cost of serving user i
    from SBS j, assuming no cross-interference (U x B matrix)."""
    th, dp, dd = weights.theta, weights.delta_p, weights.delta_d
    a = th * dp * scenario.radio.amplifier_factor
    sbits = scenario.preferences @ scenario.file_sizes
    w = scenario.radio.bandwidth_per_user_hz
    noise = scenario.radio.noise_power_w
    reqs = scenario.rate_requirements()
    caps = scenario.max_powers
    g = scenario.gains
    out = np.empty_like(g)
    for i in range(scenario.num_users):
        b = (1 - th) * dd * sbits[i]
        for j in range(scenario.num_sbs):
            out[i, j] = _pair_cost(a, b, params.alpha[i, j], params.beta[i, j],
                                   w, g[i, j], noise, reqs[i], caps[j])
    return out


def make_optimality_cut(x_used: np.ndarray, subproblem_cost: float,
                        pair_bounds: np.ndarray) -> Cut:
    """Cut that is tight at ``x_used`` and a valid under-estimate elsewhere.

    Any other association shares at most U-1 pairs with ``x_used``, so
    spreading the gap between the achieved cost and the summed pair bounds
    over the used pairs (and charging back U-1 shares in the constant) keeps
    the cut below the true cost everywhere else.
    """
    x_used = np.asarray(x_used, dtype=int)
    num_users = x_used.shape[0]
    used_sum = float(np.sum(pair_bounds * x_used))
    delta = max(subproblem_cost - used_sum, 0.0)
    coeffs = pair_bounds + delta * x_used
    const = -delta * (num_users - 1) - CUT_SLACK
    return Cut(kind="optimality", const_term=const, x_coeffs=coeffs,
               meta={"subproblem_cost": subproblem_cost, "gap": delta})


def make_feasibility_cut(scenario: Scenario, x_used: np.ndarray,
                         certificate: FeasibilityCertificate) -> Cut:
    """Exclusion cut for an association whose power subproblem is infeasible.

    The frozen-power affine form sum(nu * (p - x * Pmax)) <= 0 is not valid
    here: the rate constraints re-shape with the association, and on
    enumerable instances that form cuts off associations whose subproblem is
    perfectly feasible.  A cut that removes exactly the certified point, with
    value eta at it, keeps the certificate (eta, nu) attached and is valid by
    construction.
    """
    if certificate.eta <= CUT_TOL:
        raise ValueError("feasibility cut requires a strictly positive "
                         "violation; the subproblem should have been feasible")
    x_used = np.asarray(x_used, dtype=int)
    eta = certificate.eta
    coeffs = eta * np.where(x_used == 1, 1.0, -1.0)
    const = eta * (1.0 - float(x_used.sum()))
    return Cut(kind="feasibility", const_term=const, x_coeffs=coeffs,
               meta={"eta": eta, "duals_nu": certificate.duals_nu})


def make_no_good_cut(x_used: np.ndarray) -> Cut:
    """Excludes exactly ``x_used`` (violated iff the association matches)."""
    x_used = np.asarray(x_used, dtype=int)
    coeffs = np.where(x_used == 1, 1.0, -1.0)
    const = 1.0 - float(x_used.sum())
    return Cut(kind="no_good", const_term=const, x_coeffs=coeffs)


@dataclass(frozen=True)
class MasterSolution:
    association: np.ndarray
    placement: np.ndarray
    phi: float
    objective: float  # phi + F2
    solve_mode: str = "exact"


class MasterInfeasible(Exception):
    """Every association is excluded by feasibility/exclusion cuts."""


def _subset_masks(num_files: int) -> np.ndarray:
    combos = np.arange(2 ** num_files)[:, None]
    return ((combos >> np.arange(num_files)) & 1).astype(float)


def best_placement(scenario: Scenario, x: np.ndarray,
                   weights: ObjectiveWeights) -> tuple[np.ndarray, float]:
    """Optimal cache placement for a fixed association.

    The binary cost separates per SBS, and file counts are small, so each
    SBS's placement is found by exact subset enumeration under its cache and
    backhaul capacities.  Returns the placement and the full binary cost F2.
    """
    x = np.asarray(x, dtype=int)
    th, dp, dd = weights.theta, weights.delta_p, weights.delta_d
    sizes = scenario.file_sizes
    rates = scenario.file_rates
    masks = _subset_masks(scenario.num_files)
    cache_use = masks @ sizes
    y = np.zeros((scenario.num_sbs, scenario.num_files), dtype=int)
    for j, sbs in enumerate(scenario.sbss):
        users = np.flatnonzero(x[:, j] == 1)
        demand = scenario.preferences[users].sum(axis=0)  # sum_k q_ik per file
        bh_rate = demand * rates  # offloaded backhaul rate per file if uncached
        feasible = cache_use <= sbs.cache_capacity_bits + 1e-9
        bh_load = (1.0 - masks) @ bh_rate
        feasible &= bh_load <= sbs.backhaul_capacity_bps + 1e-9
        if not np.any(feasible):
            raise MasterInfeasible(
                f"SBS {j}: no placement satisfies cache/backhaul capacities")
        cost = (th * dp * (sbs.cache_coeff_w_per_bit * cache_use
                           + sbs.backhaul_coeff_w_per_bps * bh_load)
                + (1 - th) * dd * sbs.backhaul_delay_s
                * ((1.0 - masks) @ demand))
        cost = np.where(feasible, cost, np.inf)
        y[j] = masks[int(np.argmin(cost))].astype(int)
    return y, binary_objective(scenario, x, y, weights)


def _phi_of(x: np.ndarray, cuts: list[Cut]) -> float:
    # Zero is itself a valid lower bound: the subproblem cost is a sum of
    # nonnegative power and delay terms.
    phi = 0.0
    for cut in cuts:
        if cut.kind == "optimality":
            phi = max(phi, cut_value(cut, x))
    return phi


def _excluded(x: np.ndarray, cuts: list[Cut]) -> bool:
    return any(cut_value(c, x) > CUT_TOL for c in cuts
               if c.kind in ("feasibility", "no_good"))


def solve_master_exact(scenario: Scenario, weights: ObjectiveWeights,
                       cuts: list[Cut],
                       enumeration_budget: int = 12) -> MasterSolution:
    """Enumerate associations, take the best placement per association, and
    minimize ``phi + F2``.  Ties break toward the lexicographically smallest
    association so repeated runs are reproducible."""
    u, b = scenario.num_users, scenario.num_sbs
    if u * b > enumeration_budget:
        raise ValueError(
            f"problem size {u}x{b} exceeds enumeration budget "
            f"{enumeration_budget}; raise it explicitly or use the SDR master")
    best: MasterSolution | None = None
    for serving in itertools.product(range(b), repeat=u):
        x = np.zeros((u, b), dtype=int)
        x[np.arange(u), serving] = 1
        if _excluded(x, cuts):
            continue
        try:
            y, f2 = best_placement(scenario, x, weights)
        except MasterInfeasible:
            continue
        phi = _phi_of(x, cuts)
        if best is None or phi + f2 < best.objective - 1e-12:
            best = MasterSolution(association=x, placement=y, phi=phi,
                                  objective=phi + f2)
    if best is None:
        raise MasterInfeasible("all associations excluded by cuts")
    return best


@dataclass(frozen=True)
class SdrSolution:
    mean: np.ndarray  # relaxed first-moment vector z (x flat, y flat, phi)
    second_moment: np.ndarray  # relaxed Z ~ z z^T
    lower_bound: float  # relaxed optimum; under-estimates the exact master


def _sdr_layout(scenario: Scenario) -> tuple[int, int, int]:
    u, b, f = scenario.num_users, scenario.num_sbs, scenario.num_files
    nx, ny = u * b, b * f
    return nx, ny, nx + ny + 1


def _f2_coefficients(scenario: Scenario, weights: ObjectiveWeights):
    """F2 as const + lin . z + sum of quadratic couplings between x and y."""
    u, b, f = scenario.num_users, scenario.num_sbs, scenario.num_files
    nx, ny, n = _sdr_layout(scenario)
    th, dp, dd = weights.theta, weights.delta_p, weights.delta_d
    q = scenario.preferences
    rates = scenario.file_rates
    sizes = scenario.file_sizes
    lin = np.zeros(n)
    quad: dict[tuple[int, int], float] = {}
    const = th * dp * sum(s.circuit_power_w for s in scenario.sbss)
    for j, sbs in enumerate(scenario.sbss):
        for k in range(f):
            lin[nx + j * f + k] += th * dp * sbs.cache_coeff_w_per_bit * sizes[k]
        for i in range(u):
            xi = i * b + j
            # backhaul power and delay accrue for uncached demanded files
            for k in range(f):
                w_pwr = th * dp * sbs.backhaul_coeff_w_per_bps * q[i, k] * rates[k]
                w_del = (1 - th) * dd * q[i, k] * sbs.backhaul_delay_s
                lin[xi] += w_pwr + w_del
                yk = nx + j * f + k
                quad[(xi, yk)] = quad.get((xi, yk), 0.0) - (w_pwr + w_del)
    return const, lin, quad


def _quad_expr(pairs: dict[tuple[int, int], float], big_z: cp.Variable):
    return sum(coeff * big_z[a, bq] for (a, bq), coeff in pairs.items())


def solve_sdr(scenario: Scenario, weights: ObjectiveWeights,
              cuts: list[Cut], phi_upper: float | None = None) -> SdrSolution:
    """Semidefinite relaxation of the master: binaries relaxed to [0, 1] with
    a positive-semidefinite second-moment matrix, binary diagonal identities
    kept, and all cuts imposed.  Its optimum lower-bounds the exact master.
    """
    nx, ny, n = _sdr_layout(scenario)
    if n > SDR_MAX_DIM:
        raise ValueError(f"SDR dimension {n} exceeds guard {SDR_MAX_DIM}")
    u, b, f = scenario.num_users, scenario.num_sbs, scenario.num_files
    z = cp.Variable(n)
    big_z = cp.Variable((n, n), symmetric=True)
    phi = z[n - 1]
    const, lin, quad = _f2_coefficients(scenario, weights)
    objective = const + lin @ z + _quad_expr(quad, big_z) + phi

    cons = [cp.bmat([[big_z, cp.reshape(z, (n, 1), order="C")],
                     [cp.reshape(z, (1, n), order="C"), np.ones((1, 1))]]) >> 0]
    bin_idx = np.arange(nx + ny)
    cons += [z[bin_idx] >= 0, z[bin_idx] <= 1,
             cp.diag(big_z)[bin_idx] == z[bin_idx], phi >= 0]
    if phi_upper is not None:
        cons.append(phi <= phi_upper)
    for i in range(u):
        cons.append(cp.sum(z[i * b:(i + 1) * b]) == 1)
    sizes, rates = scenario.file_sizes, scenario.file_rates
    q = scenario.preferences
    for j, sbs in enumerate(scenario.sbss):
        ys = slice(nx + j * f, nx + (j + 1) * f)
        # Capacities are normalized to unit right-hand sides so the SDP data
        # stays well-scaled (raw bits/bps dwarf the binary entries).
        cons.append((sizes / sbs.cache_capacity_bits) @ z[ys] <= 1.0)
        # backhaul load: sum_i x_ij sum_k q_ik r_k (1 - y_jk)
        cap = sbs.backhaul_capacity_bps
        load = 0
        for i in range(u):
            xi = i * b + j
            load = load + (q[i] @ rates / cap) * z[xi]
            for k in range(f):
                load = load - q[i, k] * rates[k] / cap * big_z[xi, nx + j * f + k]
        cons.append(load <= 1.0)
    for cut in cuts:
        coeffs = cut.x_coeffs
        if cut.kind == "optimality":
            # Pairs carrying the sentinel "cannot be served" cost would wreck
            # the SDP's scaling; pin them to zero instead, which is the same
            # statement made exactly.
            blocked = coeffs >= INFEASIBLE_PAIR_COST / 2
            if np.any(blocked):
                cons.append(z[:nx][blocked.ravel()] == 0)
                coeffs = np.where(blocked, 0.0, coeffs)
            cons.append(phi >= cut.const_term + cp.sum(cp.multiply(
                coeffs, cp.reshape(z[:nx], (u, b), order="C"))))
        else:
            cons.append(cut.const_term + cp.sum(cp.multiply(
                coeffs, cp.reshape(z[:nx], (u, b), order="C"))) <= 0)

    problem = cp.Problem(cp.Minimize(objective), cons)
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.SolverError:
        pass
    # Only a cleanly solved relaxation is a trustworthy lower bound.
    if problem.status != cp.OPTIMAL:
        problem.solve(solver=cp.SCS, eps=1e-8, max_iters=50_000)
    if problem.status != cp.OPTIMAL:
        raise MasterInfeasible(f"SDR master failed with status {problem.status}")
    return SdrSolution(mean=np.asarray(z.value).reshape(-1),
                       second_moment=np.asarray(big_z.value),
                       lower_bound=float(problem.value))


def _repair_placement(scenario: Scenario, j: int, row: np.ndarray,
                      scores: np.ndarray, demand: np.ndarray) -> np.ndarray | None:
    """Fix one SBS's rounded placement row to satisfy both capacities."""
    sbs = scenario.sbss[j]
    sizes, rates = scenario.file_sizes, scenario.file_rates
    row = row.copy()
    # Evict lowest-scoring cached files until the cache fits.
    while sizes @ row > sbs.cache_capacity_bits + 1e-9:
        cached = np.flatnonzero(row == 1)
        if cached.size == 0:
            return None
        row[cached[np.argmin(scores[cached])]] = 0
    # Cache highest-scoring missing files until the backhaul load fits.
    while (1 - row) @ (demand * rates) > sbs.backhaul_capacity_bps + 1e-9:
        missing = np.flatnonzero(row == 0)
        order = missing[np.argsort(-scores[missing])]
        placed = False
        for k in order:
            if sizes @ row + sizes[k] <= sbs.cache_capacity_bits + 1e-9:
                row[k] = 1
                placed = True
                break
        if not placed:
            return None
    return row


def round_sdr(scenario: Scenario, weights: ObjectiveWeights, cuts: list[Cut],
              sdr: SdrSolution, seed: int,
              num_samples: int = 64) -> MasterSolution | None:
    """Gaussian randomized rounding of the relaxation.

    Samples around the relaxed mean with the relaxed covariance, rounds the
    association by per-user argmax and the placement by thresholding with a
    capacity repair, discards samples excluded by cuts, and keeps the best.
    Returns ``None`` when no sample survives (callers fall back to the exact
    master).
    """
    nx, ny, n = _sdr_layout(scenario)
    u, b, f = scenario.num_users, scenario.num_sbs, scenario.num_files
    mean = sdr.mean[:nx + ny]
    cov = sdr.second_moment[:nx + ny, :nx + ny] - np.outer(mean, mean)
    evals, evecs = np.linalg.eigh((cov + cov.T) / 2.0)
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    rng = np.random.default_rng(seed)
    best: MasterSolution | None = None
    samples = mean[None, :] + rng.standard_normal((num_samples, nx + ny)) @ root.T
    samples[0] = mean  # always try the deterministic center
    for s in samples:
        xs = s[:nx].reshape(u, b)
        x = np.zeros((u, b), dtype=int)
        x[np.arange(u), np.argmax(xs, axis=1)] = 1
        if _excluded(x, cuts):
            continue
        ys = s[nx:].reshape(b, f)
        y = np.zeros((b, f), dtype=int)
        ok = True
        for j in range(b):
            demand = scenario.preferences[np.flatnonzero(x[:, j])].sum(axis=0) \
                if np.any(x[:, j]) else np.zeros(f)
            row = _repair_placement(scenario, j, (ys[j] > 0.5).astype(int),
                                    ys[j], demand)
            if row is None:
                ok = False
                break
            y[j] = row
        if not ok:
            continue
        phi = _phi_of(x, cuts)
        obj = phi + binary_objective(scenario, x, y, weights)
        if best is None or obj < best.objective:
            best = MasterSolution(association=x, placement=y, phi=phi,
                                  objective=obj, solve_mode="sdr")
    return best


def cuts_to_csv(cuts: list[Cut], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "kind", "const_term", "coeffs"])
        for idx, cut in enumerate(cuts):
            flat = ";".join(f"{v:.12g}" for v in cut.x_coeffs.ravel())
            writer.writerow([idx, cut.kind, f"{cut.const_term:.12g}", flat])
