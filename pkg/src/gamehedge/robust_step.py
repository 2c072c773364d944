"""One-step robust kernel: sup over martingale laws and the dual super-hedge.

The feasible set of one-step martingale laws on a finite factor set is a
polytope cut out by two equality constraints, so its vertices are supported
on at most two factors: one up-factor ``u > 1`` with one down-factor
``d < 1`` (weight ``(1-d)/(u-d)`` on ``u``), or the point mass at ``1`` when
that factor is present.  The sup of a linear functional is therefore found
by scanning all such pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import NoMartingaleMeasure
from .market import GridSpec
from .numerics import DEFAULT_POLICY, NumericPolicy


@dataclass(frozen=True)
class FactorSet:
    """Sorted distinct positive successor multipliers."""

    factors: tuple[float, ...]

    def __post_init__(self) -> None:
        f = tuple(float(x) for x in self.factors)
        if not f or any(x <= 0 for x in f):
            raise ValueError("factors must be positive")
        if any(f[i] >= f[i + 1] for i in range(len(f) - 1)):
            raise ValueError("factors must be sorted and distinct")
        object.__setattr__(self, "factors", f)

    @classmethod
    def from_grid(cls, grid: GridSpec) -> "FactorSet":
        return cls(tuple(mv.factor for mv in grid.moves))

    @property
    def admits_martingale(self) -> bool:
        return self.factors[0] <= 1.0 <= self.factors[-1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.factors)


@dataclass(frozen=True)
class OneStepMeasure:
    """A one-step law over successor factors; ``probs[i]`` weights ``factors[i]``."""

    factors: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "factors", tuple(float(x) for x in self.factors))
        object.__setattr__(self, "probs", tuple(float(x) for x in self.probs))
        if len(self.factors) != len(self.probs):
            raise ValueError("factors and probs differ in length")

    @property
    def support(self) -> list[tuple[float, float]]:
        return [(f, p) for f, p in zip(self.factors, self.probs) if p > 0]

    def check(self, policy: NumericPolicy = DEFAULT_POLICY) -> None:
        """Raise ValueError unless this is a martingale probability law."""
        p = np.asarray(self.probs)
        f = np.asarray(self.factors)
        tol = policy.measure_tol
        if np.any(p < -tol):
            raise ValueError("negative probability")
        if abs(p.sum() - 1.0) > tol:
            raise ValueError(f"probabilities sum to {p.sum()}")
        if abs(p @ f - 1.0) > tol:
            raise ValueError(f"mean factor {p @ f} != 1")

    def is_valid(self, policy: NumericPolicy = DEFAULT_POLICY) -> bool:
        try:
            self.check(policy)
        except ValueError:
            return False
        return True

    def expect(self, values: Mapping[float, float] | Sequence[float]) -> float:
        if isinstance(values, Mapping):
            return float(sum(p * values[f] for f, p in zip(self.factors, self.probs) if p != 0))
        return float(np.asarray(self.probs) @ np.asarray(values, dtype=float))

    def to_dict(self) -> dict:
        return {"support": [[f, p] for f, p in self.support]}


def two_point_weight(u: float, d: float) -> float:
    """Mass on ``u`` of the mean-one law supported on ``{u, d}``, ``d < 1 < u``."""
    return (1.0 - d) / (u - d)


def _split(factors: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    up = np.flatnonzero(factors > 1.0)
    down = np.flatnonzero(factors < 1.0)
    one = np.flatnonzero(factors == 1.0)
    if one.size == 0 and (up.size == 0 or down.size == 0):
        raise NoMartingaleMeasure("all factors lie strictly on one side of 1")
    return up, down, one


def _unpack(values) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(values, Mapping):
        items = sorted(values.items())
        f = np.array([k for k, _ in items], dtype=float)
        v = np.array([x for _, x in items], dtype=float)
    else:
        f, v = values
        f = np.asarray(f, dtype=float)
        v = np.asarray(v, dtype=float)
    if f.shape != v.shape or f.ndim != 1 or f.size == 0:
        raise ValueError("factors and values must be matching 1-D arrays")
    return f, v


def robust_sup_arrays(
    factors: np.ndarray, values: np.ndarray, policy: NumericPolicy = DEFAULT_POLICY
) -> tuple[float, np.ndarray]:
    """Array form of :func:`robust_sup`; returns ``(value, probs)``.

    Ties are broken toward the lexicographically smallest ``(u, d)`` pair,
    with the point mass at 1 ranked before every pair.
    """
    f = np.asarray(factors, dtype=float)
    v = np.asarray(values, dtype=float)
    up, down, one = _split(f)
    cand_vals: list[np.ndarray] = []
    if one.size:
        cand_vals.append(v[one[:1]])
    if up.size and down.size:
        u = f[up][:, None]
        d = f[down][None, :]
        pu = (1.0 - d) / (u - d)
        pair_vals = pu * v[up][:, None] + (1.0 - pu) * v[down][None, :]
        cand_vals.append(pair_vals.ravel())
    allv = np.concatenate(cand_vals)
    best = float(allv.max())
    tol = policy.abs_tol * 1e-3 + policy.rel_tol * 1e-3 * abs(best)
    idx = int(np.flatnonzero(allv >= best - tol)[0])
    probs = np.zeros_like(f)
    if one.size and idx == 0:
        probs[one[0]] = 1.0
        return float(v[one[0]]), probs
    if one.size:
        idx -= 1
    # down factors are sorted ascending, pairs ordered (u asc, d asc)
    iu, idn = divmod(idx, down.size)
    ui, di = up[iu], down[idn]
    pu = two_point_weight(f[ui], f[di])
    probs[ui] = pu
    probs[di] = 1.0 - pu
    return float(pu * v[ui] + (1.0 - pu) * v[di]), probs


def robust_sup(
    values: Mapping[float, float], policy: NumericPolicy = DEFAULT_POLICY
) -> tuple[float, OneStepMeasure]:
    """Max of the expected continuation value over one-step martingale laws.

    Raises NoMartingaleMeasure if every factor lies strictly on one side of 1.
    """
    f, v = _unpack(values)
    value, probs = robust_sup_arrays(f, v, policy)
    return value, OneStepMeasure(tuple(f), tuple(probs))


def superhedge_arrays(
    spot: float, factors: np.ndarray, values: np.ndarray, policy: NumericPolicy = DEFAULT_POLICY
) -> tuple[float, float, float]:
    """Return ``(capital, gamma, sup_value)`` for one step.

    The position ``gamma`` (stocks held) is the midpoint of the interval of
    slopes that keep ``capital + gamma*spot*(f-1) >= values(f)`` for every
    factor when the capital equals the robust sup.  ``capital`` is the
    smallest capital that covers every factor at that position.
    """
    f = np.asarray(factors, dtype=float)
    v = np.asarray(values, dtype=float)
    sup_value, _ = robust_sup_arrays(f, v, policy)
    x = spot * (f - 1.0)
    upm, downm = x > 0, x < 0
    # gamma >= (v - C)/x on up moves, gamma <= (v - C)/x on down moves
    lo = float(np.max((v[upm] - sup_value) / x[upm])) if upm.any() else None
    hi = float(np.min((v[downm] - sup_value) / x[downm])) if downm.any() else None
    if lo is None and hi is None:
        gamma = 0.0
    elif lo is None:
        gamma = min(hi, 0.0)
    elif hi is None:
        gamma = max(lo, 0.0)
    else:
        gamma = 0.5 * (lo + hi)
    capital = float(np.max(v - gamma * x))
    if capital - sup_value > policy.abs_tol + policy.rel_tol * abs(sup_value):
        raise ArithmeticError(f"duality gap {capital - sup_value} at one step")
    return capital, gamma, sup_value


def one_step_superhedge(
    spot: float, values: Mapping[float, float], policy: NumericPolicy = DEFAULT_POLICY
) -> tuple[float, float]:
    """Cheapest one-step super-hedge ``(capital, gamma)`` of a continuation map."""
    f, v = _unpack(values)
    capital, gamma, _ = superhedge_arrays(spot, f, v, policy)
    return capital, gamma


def vertex_measures(factorset: FactorSet) -> list[OneStepMeasure]:
    """All vertices of the one-step martingale polytope, in tie-break order."""
    f = factorset.as_array()
    up, down, one = _split(f)
    out = []
    if one.size:
        probs = np.zeros_like(f)
        probs[one[0]] = 1.0
        out.append(OneStepMeasure(tuple(f), tuple(probs)))
    for ui in up:
        for di in down:
            probs = np.zeros_like(f)
            pu = two_point_weight(f[ui], f[di])
            probs[ui], probs[di] = pu, 1.0 - pu
            out.append(OneStepMeasure(tuple(f), tuple(probs)))
    return out


def sample_measure(factorset: FactorSet, seed: int | np.random.Generator) -> OneStepMeasure:
    """Random convex combination of one to three vertex measures.

    Deterministic for an integer seed; a Generator is consumed in place.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    verts = vertex_measures(factorset)
    k = int(rng.integers(1, 4))
    picks = rng.integers(0, len(verts), size=k)
    w = rng.dirichlet(np.ones(k))
    probs = np.zeros(len(factorset.factors))
    for wi, idx in zip(w, picks):
        probs += wi * np.asarray(verts[idx].probs)
    return OneStepMeasure(factorset.factors, tuple(probs))
