"""Immutable network instances: base stations, users, files, channel gains.

All physical quantities are stored in linear SI units (watts, bits, bps,
seconds, Hz).  dB values appear only in generation-time configuration and are
converted once, here.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RadioConfig",
    "SbsSpec",
    "FileSpec",
    "UserSpec",
    "Scenario",
    "GenerationConfig",
    "generate_scenario",
    "generate_preferences",
    "preference_divergence",
    "scenario_to_json",
    "scenario_from_json",
]

DISTANCE_FLOOR_M = 1.0


def _frozen_array(a, dtype=float):
    arr = np.asarray(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RadioConfig:
    bandwidth_per_user_hz: float
    noise_power_w: float
    amplifier_factor: float
    pathloss_ref_db: float
    pathloss_exp_coeff: float
    shadowing_std_db: float

    def __post_init__(self):
        if self.bandwidth_per_user_hz <= 0 or self.noise_power_w <= 0:
            raise ValueError("bandwidth and noise power must be positive")
        if self.amplifier_factor < 1:
            raise ValueError("amplifier_factor must be >= 1")
        if self.pathloss_ref_db <= 0 or self.pathloss_exp_coeff <= 0:
            raise ValueError("pathloss parameters must be positive")
        if self.shadowing_std_db < 0:
            raise ValueError("shadowing_std_db must be >= 0")


@dataclass(frozen=True)
class SbsSpec:
    position: tuple[float, float]
    max_tx_power_w: float
    cache_capacity_bits: float
    backhaul_capacity_bps: float
    circuit_power_w: float
    cache_coeff_w_per_bit: float
    backhaul_coeff_w_per_bps: float
    backhaul_delay_s: float

    def __post_init__(self):
        if self.max_tx_power_w <= 0:
            raise ValueError("max_tx_power_w must be positive")
        if self.backhaul_delay_s <= 0:
            raise ValueError("backhaul_delay_s must be positive")
        for name in ("cache_capacity_bits", "backhaul_capacity_bps",
                     "circuit_power_w", "cache_coeff_w_per_bit",
                     "backhaul_coeff_w_per_bps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class FileSpec:
    size_bits: float
    rate_requirement_bps: float

    def __post_init__(self):
        if self.size_bits <= 0 or self.rate_requirement_bps <= 0:
            raise ValueError("file size and rate requirement must be positive")


@dataclass(frozen=True)
class UserSpec:
    position: tuple[float, float]
    preferences: np.ndarray

    def __post_init__(self):
        prefs = _frozen_array(self.preferences)
        object.__setattr__(self, "preferences", prefs)
        if prefs.ndim != 1:
            raise ValueError("preferences must be a vector")
        if np.any(prefs < 0) or np.any(prefs > 1):
            raise ValueError("preferences must lie in [0, 1]")
        if abs(prefs.sum() - 1.0) > 1e-9:
            raise ValueError("preferences must sum to 1")


@dataclass(frozen=True)
class Scenario:
    radio: RadioConfig
    sbss: tuple[SbsSpec, ...]
    users: tuple[UserSpec, ...]
    files: tuple[FileSpec, ...]
    gains: np.ndarray  # U x B, linear scale
    rng_seed: int

    def __post_init__(self):
        object.__setattr__(self, "sbss", tuple(self.sbss))
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "files", tuple(self.files))
        gains = _frozen_array(self.gains)
        object.__setattr__(self, "gains", gains)
        if len(self.sbss) == 0 or len(self.users) == 0:
            raise ValueError("scenario needs at least one SBS and one user")
        if gains.shape != (len(self.users), len(self.sbss)):
            raise ValueError("gains must be U x B")
        if np.any(gains <= 0):
            raise ValueError("gains must be strictly positive")
        for u in self.users:
            if u.preferences.shape != (len(self.files),):
                raise ValueError("preference vector length must match catalog")

    @property
    def num_sbs(self) -> int:
        return len(self.sbss)

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_files(self) -> int:
        return len(self.files)

    # Convenience array views used throughout the solvers.
    @property
    def preferences(self) -> np.ndarray:
        """U x F matrix of file preferences q_ik."""
        return np.vstack([u.preferences for u in self.users])

    @property
    def file_sizes(self) -> np.ndarray:
        return np.array([f.size_bits for f in self.files])

    @property
    def file_rates(self) -> np.ndarray:
        return np.array([f.rate_requirement_bps for f in self.files])

    @property
    def max_powers(self) -> np.ndarray:
        return np.array([b.max_tx_power_w for b in self.sbss])

    @property
    def cache_capacities(self) -> np.ndarray:
        return np.array([b.cache_capacity_bits for b in self.sbss])

    @property
    def backhaul_capacities(self) -> np.ndarray:
        return np.array([b.backhaul_capacity_bps for b in self.sbss])

    @property
    def backhaul_delays(self) -> np.ndarray:
        return np.array([b.backhaul_delay_s for b in self.sbss])

    def rate_requirements(self) -> np.ndarray:
        """Per-user average rate requirement R_i = sum_k q_ik r_k."""
        return self.preferences @ self.file_rates


@dataclass(frozen=True)
class GenerationConfig:
    """Knobs for random instance generation.

    Positions follow a uniform (binomial point process) scatter over the
    square area; with ``poisson_counts`` the SBS/user counts themselves are
    Poisson-drawn around the configured values (clamped to >= 1), mimicking a
    PPP with intensity count/area.

    The pathloss formula is ``ref_db + coeff * log10(d / distance_unit_m)``.
    ``distance_unit_m = 1`` applies the formula to the distance in meters;
    1000 applies it to kilometers, which yields workable link budgets at desk
    scale.
    """

    num_sbs: int = 3
    num_users: int = 4
    num_files: int = 5
    area_side_m: float = 250.0
    poisson_counts: bool = False
    seed: int = 0

    bandwidth_per_user_hz: float = 200e3
    noise_density_dbm_hz: float = -174.0
    amplifier_factor: float = 4.7
    pathloss_ref_db: float = 140.0
    pathloss_exp_coeff: float = 36.7
    pathloss_distance_unit_m: float = 1000.0
    shadowing_std_db: float = 4.0

    max_tx_power_w: float = 1.0  # 30 dBm
    circuit_power_w: float = 5.1
    cache_coeff_w_per_bit: float = 6e-12
    backhaul_coeff_w_per_bps: float = 4e-8
    cache_capacity_bits: float = 2e7
    backhaul_capacity_bps: float = 1e9
    backhaul_delay_mean_s: float = 1.75
    backhaul_delay_range_s: tuple[float, float] = (0.5, 3.0)

    file_size_bits_range: tuple[float, float] = (4e6, 1.6e7)
    rate_requirement_bps_range: tuple[float, float] = (1e5, 3e5)
    preference_skew: float = 0.8
    preference_global_weight: float = 0.5


def _zipf_row(num_files: int, skew: float) -> np.ndarray:
    ranks = np.arange(1, num_files + 1, dtype=float)
    w = ranks ** (-skew)
    return w / w.sum()


def generate_preferences(num_users: int, num_files: int, skew: float,
                         seed: int, global_weight: float = 0.5) -> np.ndarray:
    """U x F preference matrix: mixture of a shared Zipf ranking and a
    per-user randomly permuted Zipf ranking.

    ``global_weight`` in [0, 1] scales the shared component; lower values
    yield more divergent user preferences.
    """
    if num_files <= 0:
        raise ValueError("num_files must be positive")
    if num_users <= 0:
        raise ValueError("num_users must be positive")
    if skew < 0:
        raise ValueError("skew must be >= 0")
    if not 0 <= global_weight <= 1:
        raise ValueError("global_weight must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    base = _zipf_row(num_files, skew)
    rows = np.empty((num_users, num_files))
    for i in range(num_users):
        perm = rng.permutation(num_files)
        rows[i] = global_weight * base + (1.0 - global_weight) * base[perm]
    rows /= rows.sum(axis=1, keepdims=True)
    return rows


def preference_divergence(prefs: np.ndarray, q_max: float | None = None) -> float:
    """Spread-of-preference statistic: sum over files of the per-user
    variance of q_ik (population variance, divided by U).

    If ``q_max`` is given the raw value is normalized by it and clipped to
    [0, 1].
    """
    prefs = np.asarray(prefs, dtype=float)
    mean = prefs.mean(axis=0, keepdims=True)
    q = float(np.sum((prefs - mean) ** 2) / prefs.shape[0])
    if q_max is None:
        return q
    return float(min(max(q / q_max, 0.0), 1.0))


def _pathloss_gain(dist_m: np.ndarray, ref_db: float, coeff: float,
                   unit_m: float) -> np.ndarray:
    d = np.maximum(dist_m, DISTANCE_FLOOR_M)
    pl_db = ref_db + coeff * np.log10(d / unit_m)
    return 10.0 ** (-pl_db / 10.0)


def generate_scenario(config: GenerationConfig) -> Scenario:
    """Random instance: uniform placement over the square, pathloss plus
    lognormal shadowing gains, exponential backhaul delays clamped to the
    configured range.  Deterministic for a fixed seed."""
    rng = np.random.default_rng(config.seed)

    num_sbs, num_users = config.num_sbs, config.num_users
    if config.poisson_counts:
        num_sbs = max(1, int(rng.poisson(config.num_sbs)))
        num_users = max(1, int(rng.poisson(config.num_users)))
    if num_sbs <= 0 or num_users <= 0:
        raise ValueError("need at least one SBS and one user")
    if config.num_files <= 0:
        raise ValueError("need at least one file")

    side = config.area_side_m
    sbs_pos = rng.uniform(0.0, side, size=(num_sbs, 2))
    user_pos = rng.uniform(0.0, side, size=(num_users, 2))

    lo, hi = config.backhaul_delay_range_s
    bh_delay = np.clip(rng.exponential(config.backhaul_delay_mean_s, size=num_sbs), lo, hi)

    noise_w = 10.0 ** (config.noise_density_dbm_hz / 10.0) / 1e3 * config.bandwidth_per_user_hz
    radio = RadioConfig(
        bandwidth_per_user_hz=config.bandwidth_per_user_hz,
        noise_power_w=noise_w,
        amplifier_factor=config.amplifier_factor,
        pathloss_ref_db=config.pathloss_ref_db,
        pathloss_exp_coeff=config.pathloss_exp_coeff,
        shadowing_std_db=config.shadowing_std_db,
    )

    dist = np.linalg.norm(user_pos[:, None, :] - sbs_pos[None, :, :], axis=2)
    gains = _pathloss_gain(dist, config.pathloss_ref_db, config.pathloss_exp_coeff,
                           config.pathloss_distance_unit_m)
    if config.shadowing_std_db > 0:
        shadow_db = rng.normal(0.0, config.shadowing_std_db, size=dist.shape)
        gains = gains * 10.0 ** (shadow_db / 10.0)

    f_lo, f_hi = config.file_size_bits_range
    r_lo, r_hi = config.rate_requirement_bps_range
    sizes = rng.uniform(f_lo, f_hi, size=config.num_files)
    rates = rng.uniform(r_lo, r_hi, size=config.num_files)

    prefs = generate_preferences(num_users, config.num_files,
                                 config.preference_skew,
                                 seed=int(rng.integers(0, 2 ** 31)),
                                 global_weight=config.preference_global_weight)

    sbss = tuple(
        SbsSpec(position=(float(sbs_pos[j, 0]), float(sbs_pos[j, 1])),
                max_tx_power_w=config.max_tx_power_w,
                cache_capacity_bits=config.cache_capacity_bits,
                backhaul_capacity_bps=config.backhaul_capacity_bps,
                circuit_power_w=config.circuit_power_w,
                cache_coeff_w_per_bit=config.cache_coeff_w_per_bit,
                backhaul_coeff_w_per_bps=config.backhaul_coeff_w_per_bps,
                backhaul_delay_s=float(bh_delay[j]))
        for j in range(num_sbs))
    users = tuple(
        UserSpec(position=(float(user_pos[i, 0]), float(user_pos[i, 1])),
                 preferences=prefs[i])
        for i in range(num_users))
    files = tuple(FileSpec(size_bits=float(sizes[k]),
                           rate_requirement_bps=float(rates[k]))
                  for k in range(config.num_files))
    return Scenario(radio=radio, sbss=sbss, users=users, files=files,
                    gains=gains, rng_seed=config.seed)


# ---------------------------------------------------------------------------
# JSON serialization


def scenario_to_json(scn: Scenario) -> str:
    doc = {
        "rng_seed": scn.rng_seed,
        "radio": dataclasses.asdict(scn.radio),
        "sbss": [dataclasses.asdict(b) for b in scn.sbss],
        "users": [{"position": list(u.position),
                   "preferences": u.preferences.tolist()} for u in scn.users],
        "files": [dataclasses.asdict(f) for f in scn.files],
        "gains": scn.gains.tolist(),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def scenario_from_json(text: str) -> Scenario:
    doc = json.loads(text)
    radio = RadioConfig(**doc["radio"])
    sbss = tuple(SbsSpec(**{**b, "position": tuple(b["position"])}) for b in doc["sbss"])
    users = tuple(UserSpec(position=tuple(u["position"]),
                           preferences=np.array(u["preferences"]))
                  for u in doc["users"])
    files = tuple(FileSpec(**f) for f in doc["files"])
    return Scenario(radio=radio, sbss=sbss, users=users, files=files,
                    gains=np.array(doc["gains"]), rng_seed=doc["rng_seed"])
