import itertools

import numpy as np
import pytest

from cellcache import convex_approx as ca
from cellcache import master_solver as ms
from cellcache import primal_solver as ps
from cellcache.exact_model import ObjectiveWeights, binary_objective
from cellcache.scenario import GenerationConfig, generate_scenario

from conftest import tiny_config


def _fit(scn):
    return ca.fit_params(scn, ca.default_anchor_powers(scn))


def _tiny(seed=0, **kw):
    kw.setdefault("num_sbs", 2)
    kw.setdefault("num_users", 2)
    kw.setdefault("num_files", 3)
    return generate_scenario(tiny_config(seed=seed, **kw))


def _all_associations(scn):
    u, b = scn.num_users, scn.num_sbs
    for serving in itertools.product(range(b), repeat=u):
        x = np.zeros((u, b), dtype=int)
        x[np.arange(u), serving] = 1
        yield x


def _solve_each_association(scn, params, weights):
    """(x, cost or None) for every association; cost is the subproblem
    optimum when the power problem is feasible."""
    out = []
    for x in _all_associations(scn):
        try:
            sol = ps.solve_primal(scn, params, x,
                                  np.zeros((scn.num_sbs, scn.num_files),
                                           dtype=int), weights)
        except (ps.PrimalSolverError, ps.HardInfeasible):
            out.append((x, None))
            continue
        cost = sol.objective if isinstance(sol, ps.PrimalSolution) else None
        out.append((x, cost))
    return out


def test_optimality_cut_tight_at_origin_and_valid_everywhere():
    scn = _tiny(seed=1)
    params = _fit(scn)
    weights = ObjectiveWeights(theta=0.5)
    bounds = ms.pair_cost_bounds(scn, params, weights)
    solved = _solve_each_association(scn, params, weights)
    for x_used, cost_used in solved:
        if cost_used is None:
            continue
        cut = ms.make_optimality_cut(x_used, cost_used, bounds)
        # Tight (within the deliberate slack) at the generating association.
        assert ms.cut_value(cut, x_used) <= cost_used
        assert ms.cut_value(cut, x_used) >= cost_used - 1e-6
        # Never above the true cost anywhere else (cut validity).
        for x_other, cost_other in solved:
            if cost_other is None:
                continue
            assert ms.cut_value(cut, x_other) <= cost_other + 1e-9


def test_cut_never_excludes_the_oracle_optimizer():
    from cellcache.baselines import exhaustive_oracle

    scn = _tiny(seed=2)
    params = _fit(scn)
    weights = ObjectiveWeights(theta=0.5)
    oracle = exhaustive_oracle(scn, weights, params=params)
    x_star = oracle.assignment.association
    f2_star = binary_objective(scn, x_star, oracle.assignment.placement,
                               weights)
    phi_star = oracle.objective - f2_star
    bounds = ms.pair_cost_bounds(scn, params, weights)
    for x_used, cost_used in _solve_each_association(scn, params, weights):
        if cost_used is None:
            continue
        cut = ms.make_optimality_cut(x_used, cost_used, bounds)
        assert ms.cut_value(cut, x_star) <= phi_star + 1e-9


def test_feasibility_cut_excludes_origin_and_keeps_feasible_points():
    scn = _tiny(seed=0, rate_requirement_bps_range=(2e5, 3e5))
    params = _fit(scn)
    weights = ObjectiveWeights(theta=0.5)
    y0 = np.zeros((scn.num_sbs, scn.num_files), dtype=int)
    cut = None
    x_bad = None
    for x in _all_associations(scn):
        sol = ps.solve_primal(scn, params, x, y0, weights)
        if isinstance(sol, ps.Infeasible):
            try:
                cert = ps.solve_feasibility(scn, params, x, y0)
            except ps.HardInfeasible:
                continue
            cut = ms.make_feasibility_cut(scn, x, cert)
            x_bad = x
            break
    if cut is None:
        pytest.skip("no softly infeasible association in this instance")
    assert ms.cut_value(cut, x_bad) > 0.0
    for x in _all_associations(scn):
        sol = ps.solve_primal(scn, params, x, y0, weights)
        if isinstance(sol, ps.PrimalSolution):
            assert ms.cut_value(cut, x) <= 1e-9


def test_no_good_cut_excludes_exactly_one_association():
    scn = _tiny(seed=3)
    associations = list(_all_associations(scn))
    target = associations[1]
    cut = ms.make_no_good_cut(target)
    for x in associations:
        if np.array_equal(x, target):
            assert ms.cut_value(cut, x) > 0.0
        else:
            assert ms.cut_value(cut, x) <= 0.0


def test_master_with_constant_cut_minimizes_binary_cost():
    scn = _tiny(seed=4)
    weights = ObjectiveWeights(theta=0.5)
    const_cut = ms.Cut(kind="optimality", const_term=0.123,
                       x_coeffs=np.zeros_like(scn.gains))
    got = ms.solve_master_exact(scn, weights, [const_cut])
    best = min(ms.best_placement(scn, x, weights)[1]
               for x in _all_associations(scn))
    assert got.objective == pytest.approx(0.123 + best, rel=1e-12)


def test_adding_cuts_never_lowers_the_master_optimum():
    scn = _tiny(seed=5)
    params = _fit(scn)
    weights = ObjectiveWeights(theta=0.5)
    bounds = ms.pair_cost_bounds(scn, params, weights)
    cuts = []
    last = -np.inf
    for x_used, cost_used in _solve_each_association(scn, params, weights):
        if cost_used is None:
            continue
        cuts.append(ms.make_optimality_cut(x_used, cost_used, bounds))
        value = ms.solve_master_exact(scn, weights, cuts).objective
        assert value >= last - 1e-12
        last = value


def test_master_matches_brute_force_over_binaries():
    scn = _tiny(seed=6)
    params = _fit(scn)
    weights = ObjectiveWeights(theta=0.5)
    bounds = ms.pair_cost_bounds(scn, params, weights)
    cuts = []
    for x_used, cost_used in _solve_each_association(scn, params, weights):
        if cost_used is not None:
            cuts.append(ms.make_optimality_cut(x_used, cost_used, bounds))
    got = ms.solve_master_exact(scn, weights, cuts)

    masks = np.array(list(itertools.product((0, 1),
                                            repeat=scn.num_files)))
    best = np.inf
    for x in _all_associations(scn):
        phi = max([0.0] + [ms.cut_value(c, x) for c in cuts])
        for rows in itertools.product(range(len(masks)),
                                      repeat=scn.num_sbs):
            y = masks[list(rows)]
            if np.any(y @ scn.file_sizes > scn.cache_capacities + 1e-9):
                continue
            from cellcache.exact_model import backhaul_load
            if any(backhaul_load(scn, x, y, j) > scn.backhaul_capacities[j]
                   + 1e-9 for j in range(scn.num_sbs)):
                continue
            best = min(best, phi + binary_objective(scn, x, y, weights))
    assert got.objective == pytest.approx(best, rel=1e-10)


def test_master_infeasible_when_everything_is_excluded():
    scn = _tiny(seed=7)
    cuts = [ms.make_no_good_cut(x) for x in _all_associations(scn)]
    with pytest.raises(ms.MasterInfeasible):
        ms.solve_master_exact(scn, weights=ObjectiveWeights(theta=0.5),
                              cuts=cuts)


def test_sdr_lower_bounds_exact_master_and_rounding_upper_bounds():
    weights = ObjectiveWeights(theta=0.5)
    for seed in (0, 1, 2):
        scn = _tiny(seed=seed)
        params = _fit(scn)
        bounds = ms.pair_cost_bounds(scn, params, weights)
        solved = _solve_each_association(scn, params, weights)
        cuts = [ms.make_optimality_cut(x, c, bounds)
                for x, c in solved if c is not None]
        exact = ms.solve_master_exact(scn, weights, cuts)
        sdr = ms.solve_sdr(scn, weights, cuts)
        assert sdr.lower_bound <= exact.objective + 1e-6
        rounded = ms.round_sdr(scn, weights, cuts, sdr, seed=0)
        if rounded is not None:
            assert rounded.objective >= sdr.lower_bound - 1e-6
            assert rounded.objective >= exact.objective - 1e-9


def test_sdr_second_moment_is_consistent_at_binary_points():
    scn = _tiny(seed=8)
    weights = ObjectiveWeights(theta=0.5)
    sdr = ms.solve_sdr(scn, weights, cuts=[])
    z = sdr.mean
    big_z = sdr.second_moment
    # Bordered matrix [[Z, z], [z^T, 1]] must be PSD.
    n = len(z)
    bordered = np.empty((n + 1, n + 1))
    bordered[:n, :n] = big_z
    bordered[:n, n] = z
    bordered[n, :n] = z
    bordered[n, n] = 1.0
    assert np.linalg.eigvalsh(bordered).min() >= -1e-7
    # Binary diagonal: Z_ii = z_i for the binary coordinates.
    np.testing.assert_allclose(np.diag(big_z)[:-1], z[:-1], atol=1e-5)


def test_rounding_is_deterministic_given_seed():
    scn = _tiny(seed=9)
    weights = ObjectiveWeights(theta=0.5)
    sdr = ms.solve_sdr(scn, weights, cuts=[])
    a = ms.round_sdr(scn, weights, [], sdr, seed=42)
    b = ms.round_sdr(scn, weights, [], sdr, seed=42)
    assert (a is None) == (b is None)
    if a is not None:
        np.testing.assert_array_equal(a.association, b.association)
        np.testing.assert_array_equal(a.placement, b.placement)
        assert a.objective == b.objective


def test_cut_pool_serializes_to_csv(tmp_path):
    scn = _tiny(seed=10)
    cut = ms.make_no_good_cut(next(iter(_all_associations(scn))))
    path = tmp_path / "cuts.csv"
    ms.cuts_to_csv([cut], path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "index,kind,const_term,coeffs"
    assert lines[1].startswith("0,no_good,")
