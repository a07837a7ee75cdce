import numpy as np
import pytest

from cellcache.scenario import (GenerationConfig, _pathloss_gain,
                                generate_preferences, generate_scenario,
                                preference_divergence, scenario_from_json,
                                scenario_to_json)


def test_generation_is_deterministic():
    cfg = GenerationConfig(seed=7, num_sbs=3, num_users=4, num_files=5)
    a = generate_scenario(cfg)
    b = generate_scenario(cfg)
    np.testing.assert_array_equal(a.gains, b.gains)
    np.testing.assert_array_equal(a.preferences, b.preferences)
    np.testing.assert_array_equal(a.file_sizes, b.file_sizes)
    np.testing.assert_array_equal(a.backhaul_delays, b.backhaul_delays)
    assert [s.position for s in a.sbss] == [s.position for s in b.sbss]


def test_pathloss_gain_hand_value():
    # 140 + 36.7*log10(100) = 213.4 dB -> 10^-21.34
    gain = _pathloss_gain(np.array([100.0]), ref_db=140.0, coeff=36.7,
                          unit_m=1.0)
    assert gain[0] == pytest.approx(10 ** -21.34, rel=1e-12)


def test_backhaul_delays_respect_configured_range():
    cfg = GenerationConfig(seed=3, num_sbs=10,
                           backhaul_delay_mean_s=1.75,
                           backhaul_delay_range_s=(0.5, 3.0))
    scn = generate_scenario(cfg)
    assert np.all(scn.backhaul_delays >= 0.5)
    assert np.all(scn.backhaul_delays <= 3.0)


def test_zero_skew_gives_uniform_preferences():
    prefs = generate_preferences(4, 5, skew=0.0, seed=1)
    np.testing.assert_allclose(prefs, 1.0 / 5.0, atol=1e-12)


def test_full_global_weight_gives_identical_rows():
    prefs = generate_preferences(6, 4, skew=1.0, seed=2, global_weight=1.0)
    ranks = np.arange(1, 5, dtype=float)
    zipf = ranks ** -1.0 / np.sum(ranks ** -1.0)
    for row in prefs:
        np.testing.assert_allclose(row, zipf, atol=1e-12)


def test_divergence_zero_for_identical_rows():
    prefs = np.tile(np.array([0.5, 0.3, 0.2]), (4, 1))
    assert preference_divergence(prefs) == pytest.approx(0.0, abs=1e-15)


def test_divergence_hand_value():
    prefs = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert preference_divergence(prefs) == pytest.approx(0.5, rel=1e-12)


def test_divergence_is_permutation_invariant():
    rng = np.random.default_rng(0)
    prefs = rng.dirichlet(np.ones(5), size=4)
    q = preference_divergence(prefs)
    perm = rng.permutation(4)
    assert preference_divergence(prefs[perm]) == pytest.approx(q, rel=1e-12)


def test_divergence_grows_as_shared_weight_shrinks():
    stats = []
    for weight in (1.0, 0.5, 0.0):
        qs = [preference_divergence(
            generate_preferences(20, 30, skew=0.8, seed=s,
                                 global_weight=weight))
            for s in range(5)]
        stats.append(float(np.mean(qs)))
    assert stats[0] < stats[1] < stats[2]


def test_scenario_json_round_trip():
    scn = generate_scenario(GenerationConfig(seed=5))
    back = scenario_from_json(scenario_to_json(scn))
    np.testing.assert_allclose(back.gains, scn.gains, rtol=1e-15)
    np.testing.assert_allclose(back.preferences, scn.preferences, rtol=1e-15)
    assert back.radio == scn.radio
    assert back.sbss == scn.sbss
