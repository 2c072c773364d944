"""Brute-force cross-checks that share no code path with the backward-induction engine.

* :func:`vertex_tree_max` enumerates every assignment of vertex (two-point
  or point-mass) one-step laws to the nodes of a non-recombining lattice
  and maximises a plain recursive Dynkin value over them.
* :func:`superreplication_lp` enumerates every seller stopping time and
  solves the super-replication linear program over adapted positions.
* :func:`binomial_price` is the textbook binomial rollback.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterator

import numpy as np
from scipy.optimize import linprog

from .errors import CapExceeded
from .market import GridSpec, Lattice, PayoffSpec, node_payoffs


def _vertex_prob_vectors(factors: np.ndarray) -> list[np.ndarray]:
    out = []
    for i, f in enumerate(factors):
        if f == 1.0:
            p = np.zeros_like(factors)
            p[i] = 1.0
            out.append(p)
    for i, u in enumerate(factors):
        if u <= 1.0:
            continue
        for j, d in enumerate(factors):
            if d >= 1.0:
                continue
            p = np.zeros_like(factors)
            p[i] = (1.0 - d) / (u - d)
            p[j] = (u - 1.0) / (u - d)
            out.append(p)
    return out


def _internal_keys(lattice: Lattice) -> list[tuple]:
    N = lattice.market.N
    m = len(lattice.moves)
    return [key for k in range(N) for key in itertools.product(range(m), repeat=k)]


def vertex_tree_count(grid: GridSpec) -> int:
    lat = Lattice(grid)
    return len(_vertex_prob_vectors(lat.factors)) ** len(_internal_keys(lat))


def dynkin_recursive(
    lattice: Lattice,
    payoffs: dict[tuple, tuple[float, float]],
    law: Callable[[tuple], np.ndarray],
    order: str = "infsup",
) -> float:
    """Dynkin value of the root by direct recursion over move prefixes."""
    N = lattice.market.N
    m = len(lattice.moves)

    def value(key: tuple) -> float:
        f, g = payoffs[key]
        if len(key) == N:
            return f
        p = law(key)
        e = sum(p[i] * value(key + (i,)) for i in range(m) if p[i] != 0.0)
        if order == "infsup":
            return min(g, max(f, e))
        return max(f, min(g, e))

    return value(())


def _payoff_table(lattice: Lattice, spec: PayoffSpec) -> dict[tuple, tuple[float, float]]:
    N = lattice.market.N
    m = len(lattice.moves)
    table = {}
    for k in range(N + 1):
        for key in itertools.product(range(m), repeat=k):
            table[key] = node_payoffs(spec, lattice, key)
    return table


def iter_vertex_trees(grid: GridSpec, cap: int = 10**6) -> Iterator[dict[tuple, np.ndarray]]:
    """Every vertex measure tree, as ``{prefix: probs}`` dictionaries."""
    count = vertex_tree_count(grid)
    if count > cap:
        raise CapExceeded("vertex measure trees", count, cap)
    lat = Lattice(grid)
    verts = _vertex_prob_vectors(lat.factors)
    keys = _internal_keys(lat)
    for choice in itertools.product(range(len(verts)), repeat=len(keys)):
        yield {key: verts[c] for key, c in zip(keys, choice)}


def vertex_tree_max(grid: GridSpec, spec: PayoffSpec, cap: int = 10**6) -> tuple[float, float]:
    """Max and min over all vertex measure trees of the fixed-measure Dynkin value."""
    lat = Lattice(grid)
    payoffs = _payoff_table(lat, spec)
    best, worst = -math.inf, math.inf
    for tree in iter_vertex_trees(grid, cap):
        v = dynkin_recursive(lat, payoffs, tree.__getitem__)
        best = max(best, v)
        worst = min(worst, v)
    return best, worst


def sampled_tree_max(
    grid: GridSpec, spec: PayoffSpec, trees: int, seed: int
) -> float:
    """Max of the fixed-measure Dynkin value over random mixtures of vertex laws."""
    rng = np.random.default_rng(seed)
    lat = Lattice(grid)
    payoffs = _payoff_table(lat, spec)
    verts = np.array(_vertex_prob_vectors(lat.factors))
    keys = _internal_keys(lat)
    best = -math.inf
    for _ in range(trees):
        law = {}
        for key in keys:
            w = rng.dirichlet(np.ones(len(verts)) * 0.3)
            law[key] = w @ verts
        best = max(best, dynkin_recursive(lat, payoffs, law.__getitem__))
    return best


def _stopping_times(lattice: Lattice) -> list[frozenset]:
    """All seller stopping times, each as the set of nodes where it stops."""
    N = lattice.market.N
    m = len(lattice.moves)

    def rec(key: tuple) -> list[frozenset]:
        if len(key) == N:
            return [frozenset()]
        here = [frozenset([key])]
        subs = [rec(key + (i,)) for i in range(m)]
        for combo in itertools.product(*subs):
            here.append(frozenset().union(*combo))
        return here

    return rec(())


def stopping_time_count(grid: GridSpec) -> int:
    N, m = grid.market.N, grid.branching
    c = 1
    for _ in range(N):
        c = 1 + c**m
    return c


def superreplication_lp(grid: GridSpec, spec: PayoffSpec, cap: int = 10**4) -> float:
    """Cheapest perfect-hedge capital over every stopping time and every adapted position.

    For each stopping time the minimal capital is a linear program in the
    initial capital and one position per pre-cancellation node.
    """
    count = stopping_time_count(grid)
    if count > cap:
        raise CapExceeded("seller stopping times", count, cap)
    lat = Lattice(grid)
    N = lat.market.N
    m = len(lat.moves)
    payoffs = _payoff_table(lat, spec)
    internal = _internal_keys(lat)
    col = {key: i + 1 for i, key in enumerate(internal)}
    price = {key: lat.price(key) for key in payoffs}
    best = math.inf
    for stops in _stopping_times(lat):
        rows, rhs = [], []
        # walk nodes up to and including the cancellation node
        stack = [()]
        while stack:
            key = stack.pop()
            coef = np.zeros(len(internal) + 1)
            coef[0] = 1.0
            for i in range(len(key)):
                coef[col[key[:i]]] += price[key[: i + 1]] - price[key[:i]]
            f, g = payoffs[key]
            need = f
            if key in stops and len(key) < N:
                need = max(f, g)
            rows.append(-coef)
            rhs.append(-need)
            if key not in stops and len(key) < N:
                stack.extend(key + (i,) for i in range(m))
        c = np.zeros(len(internal) + 1)
        c[0] = 1.0
        res = linprog(
            c,
            A_ub=np.array(rows),
            b_ub=np.array(rhs),
            bounds=[(None, None)] * (len(internal) + 1),
            method="highs",
        )
        if res.status == 0:
            best = min(best, float(res.x[0]))
    return best


def binomial_price(s: float, u: float, d: float, N: int, terminal: Callable[[float], float]) -> float:
    """Classical European price on a recombining binomial tree with zero rates."""
    p = (1.0 - d) / (u - d)
    values = [terminal(s * u**j * d ** (N - j)) for j in range(N + 1)]
    for k in range(N, 0, -1):
        values = [p * values[j + 1] + (1 - p) * values[j] for j in range(k)]
    return values[0]


def lp_robust_sup(factors: np.ndarray, values: np.ndarray) -> float:
    """One-step sup over martingale laws solved as a dense LP."""
    f = np.asarray(factors, dtype=float)
    v = np.asarray(values, dtype=float)
    res = linprog(
        -v,
        A_eq=np.vstack([np.ones_like(f), f]),
        b_eq=np.array([1.0, 1.0]),
        bounds=[(0, None)] * len(f),
        method="highs",
    )
    if res.status != 0:
        raise ArithmeticError(res.message)
    return float(-res.fun)
