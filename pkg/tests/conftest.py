"""Shared builders for the test suite."""
from __future__ import annotations

import numpy as np

from cellcache.scenario import (FileSpec, GenerationConfig, RadioConfig,
                                SbsSpec, Scenario, UserSpec)


def make_scenario(**overrides):
    """Random instance from generation defaults, overridable per test."""
    from cellcache.scenario import generate_scenario

    return generate_scenario(GenerationConfig(**overrides))


def tiny_config(**overrides) -> GenerationConfig:
    """Low-power desk-scale configuration used by the trend/ordering tests.

    Femtocell transmit budgets keep the transmit-power term in milliwatts,
    fully individual preferences make placement quality visible, and a
    costly backhaul link prices cache misses in comparable units.
    """
    base = dict(
        max_tx_power_w=1e-3,
        rate_requirement_bps_range=(5e4, 1.5e5),
        file_size_bits_range=(1e6, 4e6),
        preference_global_weight=0.0,
        backhaul_coeff_w_per_bps=4e-7,
        amplifier_factor=1.0,
        cache_capacity_bits=6e6,
    )
    base.update(overrides)
    return GenerationConfig(**base)


def hand_scenario(gains, preferences, file_sizes, file_rates,
                  noise_w=1.0, bandwidth_hz=200e3, amplifier=1.0,
                  max_tx_power_w=1.0, cache_capacity_bits=1e9,
                  backhaul_capacity_bps=1e12, circuit_power_w=5.1,
                  cache_coeff=6e-12, backhaul_coeff=4e-8,
                  backhaul_delay_s=2.0) -> Scenario:
    """Scenario with explicitly chosen gains and catalog, no randomness."""
    gains = np.asarray(gains, dtype=float)
    preferences = np.atleast_2d(np.asarray(preferences, dtype=float))
    num_users, num_sbs = gains.shape
    radio = RadioConfig(bandwidth_per_user_hz=bandwidth_hz,
                        noise_power_w=noise_w, amplifier_factor=amplifier,
                        pathloss_ref_db=140.0, pathloss_exp_coeff=36.7,
                        shadowing_std_db=0.0)
    sbss = tuple(
        SbsSpec(position=(float(j), 0.0), max_tx_power_w=max_tx_power_w,
                cache_capacity_bits=cache_capacity_bits,
                backhaul_capacity_bps=backhaul_capacity_bps,
                circuit_power_w=circuit_power_w,
                cache_coeff_w_per_bit=cache_coeff,
                backhaul_coeff_w_per_bps=backhaul_coeff,
                backhaul_delay_s=backhaul_delay_s)
        for j in range(num_sbs))
    users = tuple(
        UserSpec(position=(float(i), 1.0), preferences=preferences[i])
        for i in range(num_users))
    files = tuple(
        FileSpec(size_bits=float(s), rate_requirement_bps=float(r))
        for s, r in zip(file_sizes, file_rates))
    return Scenario(radio=radio, sbss=sbss, users=users, files=files,
                    gains=gains, rng_seed=0)
