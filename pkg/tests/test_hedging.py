import csv
import io
import json
import math

import numpy as np
import pytest

from gamehedge.dynkin import StoppingPolicy, robust_price, sample_measure_tree
from gamehedge.hedging import (
    HedgePolicy,
    adversary_search,
    build_hedge,
    empirical_modulus,
    evaluate_continuum_paths,
    lift_and_verify_continuum,
    minimal_capital,
    portfolio_trajectory,
    position_bound_constant,
    position_bound_violations,
    required_n,
    sup_norm_bound,
    verify_on_lattice,
)
from gamehedge.market import GridSpec, Lattice, MarketSpec, Path, PayoffSpec, enumerate_lattice_paths, payoff_bound
from gamehedge.oracles import superreplication_lp


def _grid(s=1.0, a=0.1, b=0.2, N=2, n=1):
    return GridSpec(MarketSpec(s, a, b, N), n)


def _linear_table(grid, style):
    """Payoff F_k = S_k as a table over every lattice node."""
    lat = Lattice(grid)
    table = {}
    for level in lat.levels():
        for key in level:
            price = lat.price(key)
            table[lat.label(key)] = (price, price if style == "game" else 100.0)
    return PayoffSpec("custom_table", table=table, default=(0.0, 0.0))


def _solve(grid, spec, **kw):
    tree = robust_price(grid, spec, **kw)
    return tree, build_hedge(tree)


def test_zero_penalty_hedge_is_trivial():
    grid = _grid(N=3)
    spec = PayoffSpec("game_put", strike=1.05, penalty=0.0)
    tree, hedge = _solve(grid, spec)
    assert hedge.initial_capital == pytest.approx(0.05, abs=1e-15)
    assert hedge.max_abs_gamma == 0.0
    assert verify_on_lattice(hedge, grid, spec).is_perfect()


def test_one_step_call_hedge():
    grid = GridSpec(MarketSpec(1.0, math.log(2), math.log(2), 1), 0)
    spec = PayoffSpec("game_call", strike=1.0, style="european", cancel_level=100.0)
    _, hedge = _solve(grid, spec)
    assert hedge.initial_capital == pytest.approx(1 / 3, abs=1e-15)
    assert hedge.gamma[()] == pytest.approx(2 / 3, abs=1e-15)


def test_linear_payoff_held_to_stop_is_one_share():
    grid = _grid(s=1.5, N=2, n=1)
    spec = _linear_table(grid, "american")
    tree, hedge = _solve(grid, spec)
    assert hedge.initial_capital == pytest.approx(1.5, abs=1e-12)
    for key, g in hedge.gamma.items():
        assert g == pytest.approx(1.0, abs=1e-9), tree.lattice.label(key)
    assert verify_on_lattice(hedge, grid, spec).is_perfect()


def test_linear_payoff_with_equal_cancellation_cancels_at_once():
    grid = _grid(s=1.5, N=2, n=1)
    spec = _linear_table(grid, "game")
    _, hedge = _solve(grid, spec)
    assert hedge.initial_capital == pytest.approx(1.5, abs=1e-12)
    assert hedge.cancel.stops_at(())
    assert hedge.max_abs_gamma == 0.0


@pytest.mark.parametrize(
    "spec",
    [
        PayoffSpec("game_put", strike=1.0, penalty=0.2),
        PayoffSpec("digital_game", strike=1.25, penalty=0.5),
        PayoffSpec("lookback_game", penalty=0.03),
        PayoffSpec("game_call", strike=0.95, penalty=0.01),
    ],
)
def test_built_hedge_is_perfect_and_tight(spec):
    grid = _grid(N=3, n=1)
    _, hedge = _solve(grid, spec)
    rep = verify_on_lattice(hedge, grid, spec)
    assert rep.is_perfect()
    assert rep.paths_checked == grid.path_count
    low = verify_on_lattice(hedge.with_capital(hedge.initial_capital - 0.01), grid, spec)
    assert low.worst_shortfall <= -0.01 + 1e-9


def test_cash_only_hedge_with_bound_capital_is_perfect():
    grid = _grid(N=3, n=1)
    spec = PayoffSpec("game_put", strike=1.1, penalty=0.05)
    lat = Lattice(grid)
    never = StoppingPolicy("seller", lat, {})
    hedge = HedgePolicy(payoff_bound(spec, grid), {}, never)
    assert verify_on_lattice(hedge, grid, spec).is_perfect()


def test_recombined_hedge_matches_full_hedge():
    grid = _grid(N=3, n=2)
    spec = PayoffSpec("game_put", strike=1.04, penalty=0.015)
    _, full = _solve(grid, spec)
    _, rec = _solve(grid, spec, recombine=True)
    a = verify_on_lattice(full, grid, spec)
    b = verify_on_lattice(rec, grid, spec)
    assert a.is_perfect() and b.is_perfect()
    assert b.worst_shortfall == pytest.approx(a.worst_shortfall, abs=1e-12)


def test_portfolio_is_self_financing():
    grid = _grid(N=3, n=1)
    spec = PayoffSpec("game_put", strike=1.05, penalty=0.02)
    _, hedge = _solve(grid, spec)
    lat = hedge.lattice
    for path in enumerate_lattice_paths(grid):
        traj = portfolio_trajectory(hedge, path)
        key = lat.root
        for k, pos in enumerate(path.positions(grid)):
            g = hedge.position(key) if k < traj.cancel_time else 0.0
            step = traj.values[k + 1] - traj.values[k]
            assert step == pytest.approx(g * (path.prices[k + 1] - path.prices[k]), abs=1e-14)
            key = lat.child(key, pos)


def test_value_process_is_supermartingale_under_robust_law():
    grid = _grid(N=3, n=1)
    spec = PayoffSpec("game_put", strike=1.05, penalty=0.02)
    tree, _ = _solve(grid, spec)
    for key, node in tree.nodes.items():
        if node.probs is not None:
            assert node.probs @ tree.child_values(key) == pytest.approx(node.continuation, abs=1e-14)
            assert node.value <= max(node.F, node.continuation) + 1e-14


def test_position_bound_holds():
    market = MarketSpec(1.0, 0.05, 0.25, 3)
    spec = PayoffSpec("game_put", strike=1.1, penalty=0.05)
    for n in (1, 2, 4):
        grid = GridSpec(market, n)
        _, hedge = _solve(grid, spec, recombine=True)
        A = payoff_bound(spec, grid)
        assert position_bound_violations(hedge, A) == []
        assert hedge.max_abs_gamma <= position_bound_constant(A, market)


def test_minimal_capital_matches_root_and_lp():
    grid = _grid(N=2, n=1)
    spec = PayoffSpec("game_put", strike=1.05, penalty=0.02)
    tree, hedge = _solve(grid, spec)
    low = minimal_capital(hedge, grid, spec, tol=1e-8)
    assert low == pytest.approx(tree.root_value, abs=1e-7)
    assert superreplication_lp(grid, spec) == pytest.approx(tree.root_value, abs=1e-8)


def test_lift_reproduces_lattice_margins_on_lattice_paths():
    grid = _grid(N=2, n=2)
    spec = PayoffSpec("game_put", strike=1.0, penalty=0.02)
    _, hedge = _solve(grid, spec)
    paths = np.array([p.prices for p in enumerate_lattice_paths(grid)])
    lifted = evaluate_continuum_paths(hedge, grid, spec, paths, epsilon=0.01)
    plain = evaluate_continuum_paths(hedge, grid, spec, paths, epsilon=0.0)
    assert np.allclose(lifted - plain, 0.02, atol=1e-14)
    assert verify_on_lattice(hedge, grid, spec).worst_shortfall == pytest.approx(np.min(plain), abs=1e-12)


def test_lift_with_required_refinement_is_perfect():
    market = MarketSpec(1.0, 0.05, 0.1, 2)
    spec = PayoffSpec("game_put", strike=1.0, penalty=0.02)
    eps = 0.2
    M = position_bound_constant(payoff_bound(spec, GridSpec(market, 1)), market)
    n = required_n(eps, market, M, spec.lipschitz)
    grid = GridSpec(market, n)
    _, hedge = _solve(grid, spec, recombine=True)
    rep = lift_and_verify_continuum(hedge, grid, spec, eps, samples=5000, seed=1)
    assert rep.is_perfect()
    assert rep.paths_checked == 5000


def test_lift_report_for_kinked_payoff_on_coarse_grid():
    market = MarketSpec(1.0, 0.05, 0.3, 2)
    spec = PayoffSpec("digital_game", strike=1.1, penalty=0.1)
    grid = GridSpec(market, 1)
    _, hedge = _solve(grid, spec)
    rep = lift_and_verify_continuum(hedge, grid, spec, 0.0, samples=2000, seed=3)
    assert rep.paths_checked == 2000
    assert math.isfinite(rep.worst_shortfall)
    assert len(rep.rows) <= 100


def test_sup_norm_bound_and_required_n():
    market = MarketSpec(2.0, 0.1, 0.3, 3)
    assert sup_norm_bound(GridSpec(market, 4)) == pytest.approx(2 * math.exp(0.9) * math.expm1(3 * 0.05))
    n = required_n(0.05, market, 1.0, 1.0)
    d = sup_norm_bound(GridSpec(market, n))
    assert d * 3 < 0.05 / 6
    assert sup_norm_bound(GridSpec(market, n - 1)) * 3 >= 0.05 / 6
    assert required_n(0.05, MarketSpec(1.0, 0.2, 0.2, 3), 1.0, 1.0) == 1
    with pytest.raises(ValueError):
        required_n(0.0, market, 1.0, 1.0)


def test_empirical_modulus_within_declared_constant():
    market = MarketSpec(1.0, 0.05, 0.2, 3)
    for family in ("game_put", "game_call", "lookback_game"):
        spec = PayoffSpec(family, strike=1.0, penalty=0.02)
        assert empirical_modulus(spec, market, 2000, 0) <= spec.lipschitz + 1e-9


def test_adversary_modes():
    grid = _grid(N=3, n=1)
    spec = PayoffSpec("digital_game", strike=1.25, penalty=0.5)
    _, hedge = _solve(grid, spec)
    assert hedge.max_abs_gamma > 0
    exhaustive = adversary_search(hedge, grid, spec, mode="exhaustive")
    assert exhaustive.worst_shortfall == verify_on_lattice(hedge, grid, spec).worst_shortfall
    greedy = adversary_search(hedge, grid, spec, mode="greedy")
    assert greedy.worst_shortfall >= exhaustive.worst_shortfall - 1e-12
    broken = HedgePolicy(hedge.initial_capital, {k: -g for k, g in hedge.gamma.items()}, hedge.cancel)
    assert adversary_search(broken, grid, spec, mode="exhaustive").worst_shortfall < 0
    assert adversary_search(broken, grid, spec, mode="greedy").worst_shortfall < 0


def test_report_exports():
    grid = _grid(N=2, n=1)
    spec = PayoffSpec("game_put", strike=1.05, penalty=0.02)
    _, hedge = _solve(grid, spec)
    rep = verify_on_lattice(hedge.with_capital(hedge.initial_capital - 0.01), grid, spec)
    doc = json.loads(json.dumps(rep.to_dict()))
    assert doc["worst_shortfall"] < 0
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["path", "exercise_index", "margin"]
    assert len(rows) > 1
    assert min(float(r[2]) for r in rows[1:]) == pytest.approx(rep.worst_shortfall)


def test_single_sabotaged_position_is_caught():
    grid = _grid(N=3, n=1)
    spec = PayoffSpec("digital_game", strike=1.25, penalty=0.5)
    tree, hedge = _solve(grid, spec)
    caught = 0
    for key, g in hedge.gamma.items():
        node = tree.nodes[key]
        # zeroing only bites where cash alone cannot cover the best child
        if abs(g) < 1e-6 or tree.child_values(key).max() <= node.value + 1e-6:
            continue
        gamma = dict(hedge.gamma)
        gamma[key] = 0.0
        broken = HedgePolicy(hedge.initial_capital, gamma, hedge.cancel)
        assert adversary_search(broken, grid, spec, mode="exhaustive").worst_shortfall < -1e-9
        caught += 1
    assert caught > 0


def test_portfolio_increments_have_zero_mean_under_martingale_laws():
    grid = _grid(N=3, n=1)
    spec = PayoffSpec("game_put", strike=1.0, penalty=0.2)
    _, hedge = _solve(grid, spec)
    assert hedge.max_abs_gamma > 0
    lat = Lattice(grid)
    rng = np.random.default_rng(21)
    for _ in range(20):
        mean = 0.0
        for positions, w in sample_measure_tree(grid, rng).path_law().items():
            path = Path(tuple(lat.price(positions[:k]) for k in range(4)), grid=grid)
            traj = portfolio_trajectory(hedge, path)
            mean += w * (traj.values[-1] - traj.values[0])
        assert abs(mean) <= 1e-9
