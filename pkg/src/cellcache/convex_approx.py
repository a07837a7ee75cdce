"""Concave rate lower bound and convex surrogate objective.

Two-step relaxation: (1) bound log2(1+g) from below by a*log2(g)+b, with the
pair constants fitted to be tight at an anchor SINR; (2) substitute powers by
their natural logs, which makes the bounded rate concave and the surrogate
power/delay objective convex in the log-power variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exact_model import ObjectiveWeights
from .scenario import Scenario

__all__ = [
    "ApproxParams",
    "LogPower",
    "POWER_FLOOR_W",
    "default_anchor_powers",
    "fit_params",
    "refit_iteration",
    "interference_matrix",
    "approx_rate",
    "approx_rate_matrix",
    "f1_surrogate",
    "f1_surrogate_gradient",
    "surrogate_objective",
    "params_to_csv",
]

LN2 = math.log(2.0)

# Realizes "off" pairs in log space: exp(ln POWER_FLOOR_W) is far below any
# interference or noise scale that matters.
POWER_FLOOR_W = 1e-12


@dataclass(frozen=True)
class ApproxParams:
    alpha: np.ndarray  # U x B
    beta: np.ndarray  # U x B
    anchor_sinr: np.ndarray  # U x B

    def __post_init__(self):
        for name in ("alpha", "beta", "anchor_sinr"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.alpha <= 0) or np.any(self.alpha >= 1):
            raise ValueError("alpha must lie strictly in (0, 1)")


@dataclass(frozen=True)
class LogPower:
    values: np.ndarray  # U x B, natural log of watts

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)


def default_anchor_powers(scenario: Scenario) -> np.ndarray:
    """Uniform full-budget split: every pair carries P_j^max / U."""
    caps = scenario.max_powers
    return np.tile(caps / scenario.num_users, (scenario.num_users, 1))


def _anchor_sinr_matrix(scenario: Scenario, powers: np.ndarray) -> np.ndarray:
    interference = interference_matrix(scenario, np.asarray(powers, dtype=float))
    return powers * scenario.gains / interference


def fit_params(scenario: Scenario, anchor_powers: np.ndarray) -> ApproxParams:
    """Fit (alpha, beta) per pair so the rate bound is tight at the SINR
    produced by the anchor power profile."""
    anchor_powers = np.asarray(anchor_powers, dtype=float)
    if anchor_powers.shape != scenario.gains.shape:
        raise ValueError("anchor powers must be U x B")
    if np.any(anchor_powers <= 0):
        raise ValueError("anchor powers must be strictly positive")
    gamma0 = _anchor_sinr_matrix(scenario, anchor_powers)
    if np.any(gamma0 <= 0):
        raise ValueError("anchor SINR must be positive")
    alpha = gamma0 / (1.0 + gamma0)
    beta = np.log2(1.0 + gamma0) - alpha * np.log2(gamma0)
    return ApproxParams(alpha=alpha, beta=beta, anchor_sinr=gamma0)


def refit_iteration(scenario: Scenario, params: ApproxParams,
                    current_powers: np.ndarray) -> ApproxParams:
    """One fixed-point refit pass: re-anchor the bound at the current power
    solution.  Pairs at (or below) the power floor keep their old constants;
    their anchor SINR would be meaningless."""
    current_powers = np.asarray(current_powers, dtype=float)
    active = current_powers > POWER_FLOOR_W * 10
    if not active.any():
        return params
    anchor = np.where(active, current_powers, default_anchor_powers(scenario))
    refitted = fit_params(scenario, anchor)
    alpha = np.where(active, refitted.alpha, params.alpha)
    beta = np.where(active, refitted.beta, params.beta)
    gamma0 = np.where(active, refitted.anchor_sinr, params.anchor_sinr)
    return ApproxParams(alpha=alpha, beta=beta, anchor_sinr=gamma0)


def interference_matrix(scenario: Scenario, powers: np.ndarray) -> np.ndarray:
    """U x B matrix of interference-plus-noise: for pair (i, j), the received
    power at user i from every pair (m, l) with m != i and l != j, plus
    noise."""
    g = scenario.gains
    col = powers.sum(axis=0)  # per-SBS total power
    total = g @ col  # all pairs seen by user i
    own_user = (powers * g).sum(axis=1)  # pairs with m = i
    own_sbs = g * col[None, :]  # pairs with l = j
    return (total[:, None] - own_user[:, None] - own_sbs + powers * g
            + scenario.radio.noise_power_w)


def approx_rate_matrix(scenario: Scenario, params: ApproxParams,
                       log_powers: np.ndarray) -> np.ndarray:
    """Lower-bounded rates for every pair at the given log powers (bps).
    Can be negative far below the anchor; callers treat <= 0 as out of the
    surrogate's domain."""
    powers = np.exp(np.asarray(log_powers, dtype=float))
    interference = interference_matrix(scenario, powers)
    w = scenario.radio.bandwidth_per_user_hz
    snr_log2 = (np.log(powers) + np.log(scenario.gains) - np.log(interference)) / LN2
    return w * (params.alpha * snr_log2 + params.beta)


def approx_rate(scenario: Scenario, params: ApproxParams,
                log_powers: np.ndarray, i: int, j: int) -> float:
    return float(approx_rate_matrix(scenario, params, log_powers)[i, j])


def _delay_weights(scenario: Scenario) -> np.ndarray:
    """Per-user expected file size sum_k q_ik s_k (bits)."""
    return scenario.preferences @ scenario.file_sizes


def f1_surrogate(scenario: Scenario, params: ApproxParams, x: np.ndarray,
                 log_powers: np.ndarray, weights: ObjectiveWeights) -> float:
    """Surrogate power-control objective: amplified transmit power plus
    wireless delay at the lower-bounded rates, summed over active pairs.
    Returns inf if any active rate is non-positive (outside the domain)."""
    th, dp, dd = weights.theta, weights.delta_p, weights.delta_d
    rho = scenario.radio.amplifier_factor
    powers = np.exp(np.asarray(log_powers, dtype=float))
    value = th * dp * rho * float(powers.sum())
    if th < 1.0:
        rates = approx_rate_matrix(scenario, params, log_powers)
        sbits = _delay_weights(scenario)
        active = np.asarray(x) == 1
        if np.any(rates[active] <= 0):
            return math.inf
        value += (1 - th) * dd * float(
            np.sum(sbits[:, None] * active / np.where(active, rates, 1.0)))
    return value


def f1_surrogate_gradient(scenario: Scenario, params: ApproxParams,
                          x: np.ndarray, log_powers: np.ndarray,
                          weights: ObjectiveWeights) -> np.ndarray:
    """Analytic gradient of the surrogate power-control objective with
    respect to the log powers (U x B)."""
    th, dp, dd = weights.theta, weights.delta_p, weights.delta_d
    rho = scenario.radio.amplifier_factor
    g = scenario.gains
    w = scenario.radio.bandwidth_per_user_hz
    powers = np.exp(np.asarray(log_powers, dtype=float))
    grad = th * dp * rho * powers
    if th >= 1.0:
        return grad

    active = np.asarray(x) == 1
    rates = approx_rate_matrix(scenario, params, log_powers)
    if np.any(rates[active] <= 0):
        raise ValueError("surrogate rate non-positive on an active pair")
    interference = interference_matrix(scenario, powers)
    sbits = _delay_weights(scenario)

    # h_ij = dd' * S_i * W * alpha_ij / (ln2 * rate_ij^2) on active pairs.
    h = np.where(active,
                 (1 - th) * dd * sbits[:, None] * w * params.alpha
                 / (LN2 * np.where(active, rates, 1.0) ** 2),
                 0.0)
    # Own-power term: raising p_ij raises the own rate, lowering the delay.
    grad -= h
    # Interference term: raising p_ab raises every other active pair's
    # interference (for i != a, j != b).
    m = h / interference
    row = m.sum(axis=1)
    col1 = g.T @ row  # sum_i g_ib * row_i, per SBS b
    col3 = (m * g).sum(axis=0)  # sum_i m_ib g_ib, per SBS b
    s = col1[None, :] - g * row[:, None] - col3[None, :] + m * g
    grad += powers * s
    return grad


def surrogate_objective(scenario: Scenario, params: ApproxParams,
                        x: np.ndarray, y: np.ndarray, log_powers: np.ndarray,
                        weights: ObjectiveWeights) -> float:
    """Full surrogate objective: surrogate power-control part plus the
    binary caching/backhaul part."""
    from .exact_model import binary_objective

    return (f1_surrogate(scenario, params, x, log_powers, weights)
            + binary_objective(scenario, x, y, weights))


def params_to_csv(params: ApproxParams) -> str:
    lines = ["i,j,alpha,beta,anchor_sinr"]
    u, b = params.alpha.shape
    for i in range(u):
        for j in range(b):
            lines.append(f"{i},{j},{params.alpha[i, j]!r},"
                         f"{params.beta[i, j]!r},{params.anchor_sinr[i, j]!r}")
    return "\n".join(lines) + "\n"
