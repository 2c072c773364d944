"""Backward induction for robust and fixed-measure Dynkin games on lattices."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .market import DEFAULT_NODE_CAP, GridSpec, Lattice, PayoffSpec, node_payoffs
from .numerics import DEFAULT_POLICY, NumericPolicy
from .robust_step import FactorSet, OneStepMeasure, robust_sup_arrays, sample_measure


class Region(str, Enum):
    BUYER_STOP = "BUYER_STOP"
    SELLER_CANCEL = "SELLER_CANCEL"
    CONTINUE = "CONTINUE"


def classify(f: float, g: float, cont: float | None) -> Region:
    # buyer priority on ties, matching H paying F when l <= k
    if cont is None or f >= cont:
        return Region.BUYER_STOP
    if g < cont:
        return Region.SELLER_CANCEL
    return Region.CONTINUE


@dataclass
class Node:
    key: tuple
    depth: int
    price: float
    F: float
    G: float
    value: float = float("nan")
    continuation: float | None = None
    region: Region = Region.BUYER_STOP
    probs: np.ndarray | None = None


@dataclass
class ValueTree:
    """Dynkin value surface over every lattice node."""

    lattice: Lattice
    spec: PayoffSpec
    nodes: dict[tuple, Node]
    levels: list[list[tuple]]
    kind: str = "robust"

    @property
    def grid(self) -> GridSpec:
        return self.lattice.grid

    @property
    def root(self) -> Node:
        return self.nodes[self.lattice.root]

    @property
    def root_value(self) -> float:
        return self.root.value

    def children(self, key: tuple) -> list[Node]:
        return [self.nodes[c] for c in self.lattice.children(key)]

    def child_values(self, key: tuple) -> np.ndarray:
        return np.array([self.nodes[c].value for c in self.lattice.children(key)])

    def measure(self, key: tuple) -> OneStepMeasure | None:
        node = self.nodes[key]
        if node.probs is None:
            return None
        return OneStepMeasure(tuple(self.lattice.factors), tuple(node.probs))

    def region_counts(self) -> dict[str, int]:
        counts = {r.value: 0 for r in Region}
        for node in self.nodes.values():
            if node.depth < self.lattice.market.N:
                counts[node.region.value] += 1
        return counts

    def check_invariants(self, policy: NumericPolicy = DEFAULT_POLICY) -> None:
        """Raise AssertionError on the first node breaking a tree invariant."""
        N = self.lattice.market.N
        tol = policy.abs_tol
        for key, node in self.nodes.items():
            label = self.lattice.label(key)
            assert node.F - tol <= node.value <= node.G + tol, f"sandwich fails at {label!r}"
            if node.depth == N:
                assert node.value == node.F, f"terminal value != F at {label!r}"
                continue
            if self.kind == "supinf":
                expect = max(node.F, min(node.G, node.continuation))
            else:
                expect = min(node.G, max(node.F, node.continuation))
            assert abs(node.value - expect) <= tol, f"recursion fails at {label!r}"

    def to_dict(self) -> dict:
        out = {}
        for key, node in self.nodes.items():
            entry = {
                "depth": node.depth,
                "price": node.price,
                "F": node.F,
                "G": node.G,
                "value": node.value,
                "continuation": node.continuation,
                "region": node.region.value,
            }
            if node.probs is not None:
                entry["measure"] = [
                    [self.lattice.moves[i].label, float(p)] for i, p in enumerate(node.probs) if p > 0
                ]
            out[self.lattice.label(key)] = entry
        return {"kind": self.kind, "root_value": self.root_value, "nodes": out}


@dataclass
class StoppingPolicy:
    """Stop/continue decision per node; ``kind`` is ``"seller"`` or ``"buyer"``."""

    kind: str
    lattice: Lattice
    stop: dict[tuple, bool]

    def stops_at(self, key: tuple) -> bool:
        if self.lattice.depth(key) == self.lattice.market.N:
            return True
        return self.stop.get(key, False)

    def time(self, positions: Iterable[int]) -> int:
        """First stopping index along a move sequence; N if never before maturity."""
        key = self.lattice.root
        k = 0
        for pos in positions:
            if self.stops_at(key):
                return k
            key = self.lattice.child(key, pos)
            k += 1
        return k

    @property
    def region_size(self) -> int:
        return sum(1 for v in self.stop.values() if v)


@dataclass
class MeasureTree:
    """A one-step martingale law at every non-terminal node."""

    lattice: Lattice
    probs: dict[tuple, np.ndarray] = field(default_factory=dict)

    def measure(self, key: tuple) -> OneStepMeasure:
        return OneStepMeasure(tuple(self.lattice.factors), tuple(self.probs[key]))

    def check(self, policy: NumericPolicy = DEFAULT_POLICY) -> None:
        for key in self.probs:
            self.measure(key).check(policy)

    def path_law(self) -> dict[tuple, float]:
        """Probability of every full move sequence (non-recombining trees only)."""
        if self.lattice.recombine:
            raise ValueError("path law needs a non-recombining tree")
        law = {(): 1.0}
        for _ in range(self.lattice.market.N):
            nxt = {}
            for key, w in law.items():
                for i, p in enumerate(self.probs[key]):
                    if p > 0:
                        nxt[key + (i,)] = w * p
            law = nxt
        return law

    def to_dict(self) -> dict:
        return {
            self.lattice.label(k): [[self.lattice.moves[i].label, float(p)] for i, p in enumerate(v) if p > 0]
            for k, v in self.probs.items()
        }


def _build_nodes(lattice: Lattice, spec: PayoffSpec, cap: int | None) -> tuple[list[list[tuple]], dict[tuple, Node]]:
    levels = lattice.levels(cap)
    nodes = {}
    for level in levels:
        for key in level:
            f, g = node_payoffs(spec, lattice, key)
            nodes[key] = Node(key=key, depth=lattice.depth(key), price=lattice.price(key), F=f, G=g)
    return levels, nodes


def robust_price(
    grid: GridSpec,
    spec: PayoffSpec,
    *,
    recombine: bool = False,
    policy: NumericPolicy = DEFAULT_POLICY,
    cap: int | None = DEFAULT_NODE_CAP,
) -> ValueTree:
    """Robust Dynkin value over the lattice: ``V_k = min(G_k, max(F_k, sup_P E_P V_{k+1}))``.

    The root value is the lattice super-replication price.  Raises
    CapExceeded for oversized trees and PayoffOrderViolation when F > G.
    """
    lattice = Lattice(grid, recombine=recombine)
    levels, nodes = _build_nodes(lattice, spec, cap)
    factors = lattice.factors
    N = grid.market.N
    for key in levels[N]:
        node = nodes[key]
        node.value = node.F
    for k in range(N - 1, -1, -1):
        for key in levels[k]:
            node = nodes[key]
            vals = np.array([nodes[c].value for c in lattice.children(key)])
            cont, probs = robust_sup_arrays(factors, vals, policy)
            node.continuation = cont
            node.probs = probs
            node.value = min(node.G, max(node.F, cont))
            node.region = classify(node.F, node.G, cont)
    return ValueTree(lattice, spec, nodes, levels, kind="robust")


def fixed_measure_dynkin(
    grid: GridSpec,
    spec: PayoffSpec,
    measure: MeasureTree,
    order: str = "infsup",
    *,
    cap: int | None = DEFAULT_NODE_CAP,
) -> ValueTree:
    """Dynkin game value under one martingale law, in either stopping order.

    ``infsup``: ``V_k = min(G_k, max(F_k, E V_{k+1}))``;
    ``supinf``: ``V_k = max(F_k, min(G_k, E V_{k+1}))``.
    """
    if order not in ("infsup", "supinf"):
        raise ValueError("order must be 'infsup' or 'supinf'")
    lattice = measure.lattice
    if lattice.grid != grid:
        raise ValueError("measure tree lives on a different grid")
    levels, nodes = _build_nodes(lattice, spec, cap)
    N = grid.market.N
    for key in levels[N]:
        nodes[key].value = nodes[key].F
    for k in range(N - 1, -1, -1):
        for key in levels[k]:
            node = nodes[key]
            p = measure.probs[key]
            vals = np.array([nodes[c].value for c in lattice.children(key)])
            e = float(p @ vals)
            node.continuation = e
            node.probs = p
            if order == "infsup":
                node.value = min(node.G, max(node.F, e))
            else:
                node.value = max(node.F, min(node.G, e))
            node.region = classify(node.F, node.G, e)
    return ValueTree(lattice, spec, nodes, levels, kind=order)


def extract_stopping(tree: ValueTree, kind: str) -> StoppingPolicy:
    """First-entry stopping rules of a solved tree.

    The buyer stops where ``V_k = F_k``; the seller cancels before maturity
    where ``V_k = G_k``.  A seller rule that never fires means no
    cancellation before maturity.
    """
    if kind not in ("seller", "buyer"):
        raise ValueError("kind must be 'seller' or 'buyer'")
    N = tree.lattice.market.N
    stop = {}
    for key, node in tree.nodes.items():
        if node.depth == N:
            stop[key] = kind == "buyer"
        elif kind == "buyer":
            stop[key] = node.value <= node.F
        else:
            stop[key] = node.value >= node.G
    return StoppingPolicy(kind, tree.lattice, stop)


def extract_measure(tree: ValueTree) -> MeasureTree:
    """Per-node maximising one-step laws of a robust tree."""
    probs = {k: n.probs.copy() for k, n in tree.nodes.items() if n.probs is not None}
    return MeasureTree(tree.lattice, probs)


def sample_measure_tree(
    grid: GridSpec, seed: int | np.random.Generator, *, recombine: bool = False, cap: int | None = DEFAULT_NODE_CAP
) -> MeasureTree:
    """Independent random martingale law at each node (nodes visited in level order)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lattice = Lattice(grid, recombine=recombine)
    fs = FactorSet.from_grid(grid)
    probs = {}
    for level in lattice.levels(cap)[:-1]:
        for key in level:
            probs[key] = np.asarray(sample_measure(fs, rng).probs)
    return MeasureTree(lattice, probs)


def measure_tree_from_mapping(lattice: Lattice, mapping: Mapping[tuple, OneStepMeasure]) -> MeasureTree:
    return MeasureTree(lattice, {k: np.asarray(m.probs) for k, m in mapping.items()})
