"""Seller super-hedges: construction, exhaustive verification, continuum lifting."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dynkin import StoppingPolicy, ValueTree, extract_stopping
from .errors import CapExceeded
from .market import (
    DEFAULT_PATH_CAP,
    GridSpec,
    Lattice,
    MarketSpec,
    Path,
    PayoffSpec,
    node_payoffs,
)
from .numerics import DEFAULT_POLICY, NumericPolicy
from .robust_step import superhedge_arrays


@dataclass
class HedgePolicy:
    """Initial capital, adapted stock position per node and seller cancellation rule."""

    initial_capital: float
    gamma: dict[tuple, float]
    cancel: StoppingPolicy

    @property
    def lattice(self) -> Lattice:
        return self.cancel.lattice

    def with_capital(self, capital: float) -> "HedgePolicy":
        return replace(self, initial_capital=float(capital))

    def position(self, key: tuple) -> float:
        return self.gamma.get(key, 0.0)

    @property
    def max_abs_gamma(self) -> float:
        return max((abs(g) for g in self.gamma.values()), default=0.0)


@dataclass(frozen=True)
class PortfolioTrajectory:
    values: tuple[float, ...]
    cancel_time: int


@dataclass
class HedgeReport:
    """Worst hedge margin ``V_{sigma^l} - H(sigma, l)`` over the checked paths."""

    worst_shortfall: float
    worst_path: Path
    worst_exercise: int
    paths_checked: int
    exhaustive: bool = True
    capital: float = float("nan")
    rows: list[tuple[str, int, float]] = field(default_factory=list)

    def is_perfect(self, slack: float = DEFAULT_POLICY.abs_tol) -> bool:
        return self.worst_shortfall >= -slack

    def to_dict(self) -> dict:
        return {
            "worst_shortfall": self.worst_shortfall,
            "worst_path": list(self.worst_path.prices),
            "worst_exercise": self.worst_exercise,
            "paths_checked": self.paths_checked,
            "exhaustive": self.exhaustive,
            "capital": self.capital,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "exercise_index", "margin"])
        for path, l, margin in self.rows:
            w.writerow([path, l, repr(float(margin))])
        return buf.getvalue()


def growth_factor(b: float) -> float:
    return 1.0 + math.expm1(b) / -math.expm1(-b)


def position_bound(A: float, b: float, k: int, spot: float) -> float:
    """Node-wise cap on |gamma| at time ``k`` and price ``spot``."""
    return A * growth_factor(b) ** k / (-math.expm1(-b) * spot)


def position_bound_constant(A: float, market: MarketSpec) -> float:
    """Grid-independent cap on |gamma|, using ``S_k >= s e^{-bk}`` for ``k < N``."""
    b = market.b
    return max(position_bound(A, b, k, market.s * math.exp(-b * k)) for k in range(market.N))


def build_hedge(tree: ValueTree, grid: GridSpec | None = None, policy: NumericPolicy = DEFAULT_POLICY) -> HedgePolicy:
    """Super-hedge whose capital is the tree's root value.

    At every node before cancellation the position is the one-step
    super-hedge of the child values; positions are zero from the
    cancellation node on.
    """
    if grid is not None and grid != tree.grid:
        raise ValueError("tree was solved on a different grid")
    lattice = tree.lattice
    N = lattice.market.N
    cancel = extract_stopping(tree, "seller")
    gamma: dict[tuple, float] = {}
    alive = {lattice.root}
    for k in range(N):
        nxt = set()
        for key in tree.levels[k]:
            node = tree.nodes[key]
            # recombined states can be reached both before and after a cancellation
            if (key not in alive and not lattice.recombine) or cancel.stop[key]:
                gamma[key] = 0.0
                continue
            _, g, _ = superhedge_arrays(node.price, lattice.factors, tree.child_values(key), policy)
            gamma[key] = g
            nxt.update(lattice.children(key))
        alive = nxt
    return HedgePolicy(tree.root_value, gamma, cancel)


def position_bound_violations(hedge: HedgePolicy, A: float, tol: float = 1e-12) -> list[str]:
    """Labels of nodes whose position breaks the node-wise bound."""
    lat = hedge.lattice
    b = lat.market.b
    bad = []
    for key, g in hedge.gamma.items():
        cap = position_bound(A, b, lat.depth(key), lat.price(key))
        if abs(g) > cap * (1 + tol):
            bad.append(lat.label(key))
    return bad


def portfolio_trajectory(hedge: HedgePolicy, path: Path, grid: GridSpec | None = None) -> PortfolioTrajectory:
    """Self-financing value ``x + sum_{i<k} gamma_i (S_{i+1} - S_i)`` along a lattice path."""
    lat = hedge.lattice
    positions = path.positions(grid or lat.grid)
    sigma = hedge.cancel.time(positions)
    key = lat.root
    v = hedge.initial_capital
    values = [v]
    for k, pos in enumerate(positions):
        g = hedge.position(key) if k < sigma else 0.0
        v = v + g * (path.prices[k + 1] - path.prices[k])
        values.append(v)
        key = lat.child(key, pos)
    return PortfolioTrajectory(tuple(values), sigma)


def _keys_by_step(lat: Lattice, positions: np.ndarray) -> list[list[tuple]]:
    """Node keys of each path at every time 0..N."""
    P, N = positions.shape
    if lat.recombine:
        signs = np.array([mv.sign for mv in lat.moves])[positions]
        js = np.array([mv.j for mv in lat.moves])[positions]
        m = np.cumsum(signs if lat.market.a != 0 else np.zeros_like(signs), axis=1)
        r = np.cumsum(signs * js, axis=1)
        keys = [[(0, 0, 0)] * P]
        for k in range(N):
            keys.append(list(zip(itertools.repeat(k + 1), m[:, k].tolist(), r[:, k].tolist())))
        return keys
    rows = [tuple(row) for row in positions.tolist()]
    return [[row[:k] for row in rows] for k in range(N + 1)]


def _margins(
    hedge: HedgePolicy,
    capital: float,
    prices: np.ndarray,
    keys: list[list[tuple]],
    F: np.ndarray,
    G: np.ndarray,
) -> np.ndarray:
    """Hedge margins for every path (rows) and buyer exercise time (columns)."""
    P, N1 = prices.shape
    N = N1 - 1
    gamma = np.zeros((P, N))
    stop = np.zeros((P, N), dtype=bool)
    gdict, sdict = hedge.gamma, hedge.cancel.stop
    for k in range(N):
        gamma[:, k] = [gdict.get(key, 0.0) for key in keys[k]]
        stop[:, k] = [sdict.get(key, False) for key in keys[k]]
    sigma = np.where(stop.any(axis=1), stop.argmax(axis=1), N)
    steps = np.arange(N)[None, :]
    active = steps < sigma[:, None]
    incr = np.where(active, gamma, 0.0) * np.diff(prices, axis=1)
    V = np.concatenate([np.full((P, 1), float(capital)), capital + np.cumsum(incr, axis=1)], axis=1)
    rows = np.arange(P)
    g_sigma = G[rows, sigma]
    v_sigma = V[rows, sigma]
    out = np.empty((P, N1))
    for l in range(N1):
        exercised = l <= sigma
        out[:, l] = np.where(exercised, V[:, l] - F[:, l], v_sigma - g_sigma)
    return out


def _report(
    margins: np.ndarray, prices: np.ndarray, capital: float, exhaustive: bool, row_limit: int = 1000, grid=None
) -> HedgeReport:
    per_path = margins.min(axis=1)
    arg_l = margins.argmin(axis=1)
    worst = int(np.argmin(per_path))
    order = np.argsort(per_path, kind="stable")[:row_limit]
    rows = [(";".join(repr(float(x)) for x in prices[i]), int(arg_l[i]), float(per_path[i])) for i in order]
    return HedgeReport(
        worst_shortfall=float(per_path[worst]),
        worst_path=Path(tuple(prices[worst]), grid=grid),
        worst_exercise=int(arg_l[worst]),
        paths_checked=int(margins.shape[0]),
        exhaustive=exhaustive,
        capital=float(capital),
        rows=rows,
    )


def _lattice_payoff_table(
    hedge: HedgePolicy, spec: PayoffSpec, keys: list[list[tuple]]
) -> tuple[np.ndarray, np.ndarray]:
    lat = hedge.lattice
    cache: dict[tuple, tuple[float, float]] = {}
    P = len(keys[0])
    F = np.empty((P, len(keys)))
    G = np.empty((P, len(keys)))
    for k, ks in enumerate(keys):
        for p, key in enumerate(ks):
            fg = cache.get(key)
            if fg is None:
                fg = cache[key] = node_payoffs(spec, lat, key)
            F[p, k], G[p, k] = fg
    return F, G


def _all_positions(grid: GridSpec, cap: int) -> np.ndarray:
    count = grid.path_count
    if count > cap:
        raise CapExceeded("lattice paths", count, cap)
    N, m = grid.market.N, grid.branching
    return np.array(list(itertools.product(range(m), repeat=N)), dtype=np.int64).reshape(count, N)


def _lattice_prices(lat: Lattice, keys: list[list[tuple]]) -> np.ndarray:
    cache: dict[tuple, float] = {}
    out = np.empty((len(keys[0]), len(keys)))
    for k, ks in enumerate(keys):
        for p, key in enumerate(ks):
            v = cache.get(key)
            if v is None:
                v = cache[key] = lat.price(key)
            out[p, k] = v
    return out


def verify_on_lattice(
    hedge: HedgePolicy,
    grid: GridSpec,
    spec: PayoffSpec,
    slack: float = DEFAULT_POLICY.abs_tol,
    *,
    cap: int = DEFAULT_PATH_CAP,
) -> HedgeReport:
    """Check the hedge inequality on every lattice path and exercise time.

    The hedge is perfect at ``slack`` iff ``report.worst_shortfall >= -slack``.
    """
    lat = hedge.lattice
    if lat.grid != grid:
        raise ValueError("hedge was built on a different grid")
    positions = _all_positions(grid, cap)
    keys = _keys_by_step(lat, positions)
    full_keys = keys if not lat.recombine else _keys_by_step(Lattice(grid), positions)
    prices = _lattice_prices(Lattice(grid), full_keys)
    F, G = _lattice_payoff_table(hedge, spec, keys)
    margins = _margins(hedge, hedge.initial_capital, prices, keys, F, G)
    return _report(margins, prices, hedge.initial_capital, exhaustive=True, grid=grid)


def evaluate_continuum_paths(
    hedge: HedgePolicy, grid: GridSpec, spec: PayoffSpec, prices: np.ndarray, epsilon: float
) -> np.ndarray:
    """Margins of the lifted hedge (capital + 2*epsilon, positions read at the
    lattice projection of each path) on arbitrary continuum paths."""
    if spec.family == "custom_table" and not spec.is_markov:
        raise ValueError("table payoffs are undefined off the lattice")
    prices = np.asarray(prices, dtype=float)
    lat = hedge.lattice
    N = grid.market.N
    positions = grid.project_indices(np.diff(np.log(prices), axis=1))
    keys = _keys_by_step(lat, positions)
    F = np.empty_like(prices)
    G = np.empty_like(prices)
    for k in range(N + 1):
        f, g = spec.evaluate(k, prices[:, : k + 1], N)
        F[:, k] = f
        G[:, k] = g
    return _margins(hedge, hedge.initial_capital + 2.0 * epsilon, prices, keys, F, G)


def sample_continuum_paths(market: MarketSpec, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Paths with log-increment magnitudes uniform on [a, b] and fair signs."""
    mags = rng.uniform(market.a, market.b, size=(samples, market.N))
    signs = np.where(rng.random((samples, market.N)) < 0.5, -1.0, 1.0)
    logp = np.concatenate([np.zeros((samples, 1)), np.cumsum(signs * mags, axis=1)], axis=1)
    return market.s * np.exp(logp)


def lift_and_verify_continuum(
    hedge: HedgePolicy,
    grid: GridSpec,
    spec: PayoffSpec,
    epsilon: float,
    samples: int,
    seed: int,
    *,
    batch: int = 50_000,
) -> HedgeReport:
    """Lift a lattice hedge to the continuum through the projection and test it
    on randomly sampled paths.

    Only continuous payoffs carry a guarantee; for others the report is
    informational.
    """
    rng = np.random.default_rng(seed)
    worst = None
    rows: list[tuple[str, int, float]] = []
    total = 0
    while total < samples:
        size = min(batch, samples - total)
        prices = sample_continuum_paths(grid.market, size, rng)
        margins = evaluate_continuum_paths(hedge, grid, spec, prices, epsilon)
        rep = _report(margins, prices, hedge.initial_capital + 2.0 * epsilon, exhaustive=False, row_limit=100)
        rows = sorted(rows + rep.rows, key=lambda r: r[2])[:100]
        if worst is None or rep.worst_shortfall < worst.worst_shortfall:
            worst = rep
        total += size
    worst.rows = rows
    worst.paths_checked = total
    return worst


def adversary_search(
    hedge: HedgePolicy,
    grid: GridSpec,
    spec: PayoffSpec,
    *,
    mode: str = "auto",
    cap: int = DEFAULT_PATH_CAP,
) -> HedgeReport:
    """Worst-case path search against a hedge.

    ``exhaustive`` returns the true minimum margin over the lattice.  ``greedy``
    follows, from the root, the child with the smallest immediate margin and
    returns that single witness path, so its margin is an upper bound on the
    true minimum.  ``auto`` picks exhaustive when the path count fits ``cap``.
    """
    if mode == "auto":
        mode = "exhaustive" if grid.path_count <= cap else "greedy"
    if mode == "exhaustive":
        return verify_on_lattice(hedge, grid, spec, cap=cap)
    if mode != "greedy":
        raise ValueError("mode must be auto, exhaustive or greedy")
    lat = hedge.lattice
    full = Lattice(grid)
    N = grid.market.N
    key = lat.root
    v = hedge.initial_capital
    positions: list[int] = []
    cancelled = False
    for k in range(N):
        if cancelled or hedge.cancel.stop.get(key, False):
            cancelled = True
            positions.append(0)
            continue
        g = hedge.position(key)
        s0 = lat.price(key)
        best = None
        for i in range(grid.branching):
            child = lat.child(key, i)
            vc = v + g * (lat.price(child) - s0)
            f, gg = node_payoffs(spec, lat, child)
            margin = vc - f
            if k + 1 < N and hedge.cancel.stop.get(child, False):
                margin = min(margin, vc - gg)
            if best is None or margin < best[0]:
                best = (margin, i, vc)
        _, i, v = best
        positions.append(i)
        key = lat.child(key, i)
    pos = np.array([positions], dtype=np.int64)
    keys = _keys_by_step(lat, pos)
    prices = _lattice_prices(full, _keys_by_step(full, pos))
    F, G = _lattice_payoff_table(hedge, spec, keys)
    margins = _margins(hedge, hedge.initial_capital, prices, keys, F, G)
    return _report(margins, prices, hedge.initial_capital, exhaustive=False, grid=grid)


def minimal_capital(
    hedge: HedgePolicy,
    grid: GridSpec,
    spec: PayoffSpec,
    *,
    tol: float = 1e-6,
    slack: float = DEFAULT_POLICY.abs_tol,
    cap: int = DEFAULT_PATH_CAP,
) -> float:
    """Smallest initial capital (to ``tol``) at which the hedge stays perfect."""

    def perfect(x: float) -> bool:
        return verify_on_lattice(hedge.with_capital(x), grid, spec, slack, cap=cap).is_perfect(slack)

    hi = hedge.initial_capital
    width = max(1.0, abs(hi))
    while not perfect(hi):
        hi += width
        width *= 2
    lo = hi - width
    while perfect(lo):
        lo -= width
        width *= 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if perfect(mid):
            hi = mid
        else:
            lo = mid
    return hi


def sup_norm_bound(grid: GridSpec) -> float:
    """Bound on ``max_i |S_i - P(S)_i|`` over all paths, P the lattice projection."""
    m = grid.market
    if grid.degenerate:
        return 0.0
    return m.s * math.exp(m.b * m.N) * math.expm1(m.N * grid.h)


def required_n(epsilon: float, market: MarketSpec, M: float, lipschitz: float) -> int:
    """Smallest refinement whose projection error keeps the lifted hedge within
    the ``2*epsilon`` budget: ``d_n (1 + 2L) < epsilon / max(2MN, 1)`` with
    ``d_n`` the sup-norm projection bound and ``L`` the payoff modulus."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if market.a == market.b:
        return 1
    if not math.isfinite(lipschitz):
        raise ValueError("payoff has no finite modulus")
    target = epsilon / max(2.0 * M * market.N, 1.0) / (1.0 + 2.0 * lipschitz)
    scale = market.s * math.exp(market.b * market.N)
    # d_n < target  <=>  N (b-a) / n < log1p(target / scale)
    n = math.floor(market.N * (market.b - market.a) / math.log1p(target / scale)) + 1
    return max(n, 1)


def empirical_modulus(spec: PayoffSpec, market: MarketSpec, samples: int, seed: int, scale: float = 1e-3) -> float:
    """Largest observed ``|payoff(S) - payoff(S')| / ||S - S'||`` over random
    nearby continuum path pairs."""
    rng = np.random.default_rng(seed)
    base = sample_continuum_paths(market, samples, rng)
    logs = np.log(base)
    inc = np.diff(logs, axis=1)
    mags = np.clip(np.abs(inc) + rng.uniform(-scale, scale, inc.shape), market.a, market.b)
    other = market.s * np.exp(np.concatenate([np.zeros((samples, 1)), np.cumsum(np.sign(inc) * mags, axis=1)], axis=1))
    dist = np.max(np.abs(base - other), axis=1)
    ok = dist > 0
    best = 0.0
    for k in range(market.N + 1):
        f1, g1 = spec.evaluate(k, base[:, : k + 1], market.N)
        f2, g2 = spec.evaluate(k, other[:, : k + 1], market.N)
        diff = np.maximum(np.abs(np.asarray(f1) - f2), np.abs(np.asarray(g1) - g2))
        diff = np.broadcast_to(diff, dist.shape)
        if ok.any():
            best = max(best, float(np.max(diff[ok] / dist[ok])))
    return best
