"""Path spaces, lattice grids, payoff specifications and the lattice projection.

A lattice node is addressed by a *key*.  In the default (non-recombining)
mode a key is the tuple of move positions taken from the root; in
recombining mode it is ``(k, m, r)`` where the log-price equals
``ln s + m*a + r*h`` and ``h`` is the grid step.  Both encodings are built
from integer sums, so prices computed for the same node along different
routes agree bit for bit.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from .errors import CapExceeded, PayoffOrderViolation
from .numerics import DEFAULT_POLICY

DEFAULT_PATH_CAP = 10**7
DEFAULT_NODE_CAP = 10**6

FAMILIES = ("game_put", "game_call", "digital_game", "lookback_game", "custom_table")
STYLES = ("game", "american", "european")


@dataclass(frozen=True)
class MarketSpec:
    """Horizon ``N``, spot ``s`` and log-increment magnitude interval ``[a, b]``."""

    s: float
    a: float
    b: float
    N: int

    def __post_init__(self) -> None:
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ValueError("s must be a positive finite price")
        if not (0.0 <= self.a <= self.b):
            raise ValueError("need 0 <= a <= b")
        if not self.b > 0:
            raise ValueError("b must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")

    def contains(self, prices: Sequence[float], tol: float = 1e-12) -> bool:
        """Membership of a price trajectory in the continuum path space."""
        p = np.asarray(prices, dtype=float)
        if p.shape != (self.N + 1,) or np.any(p <= 0):
            return False
        if abs(p[0] - self.s) > tol * self.s:
            return False
        mags = np.abs(np.diff(np.log(p)))
        return bool(np.all(mags >= self.a - tol) and np.all(mags <= self.b + tol))


@dataclass(frozen=True)
class Move:
    """One signed lattice increment: ``sign * (a + j*h)``."""

    position: int
    sign: int
    j: int
    log_increment: float
    factor: float

    @property
    def label(self) -> str:
        return f"{'-' if self.sign < 0 else '+'}{self.j}"


@dataclass(frozen=True)
class GridSpec:
    """The multinomial lattice of refinement n over a market.

    The magnitude grid is ``{a + j(b-a)/n : j = 0..n}``.  For ``n = 0`` it is
    the two endpoints ``{a, b}``; when ``a == b`` it collapses to ``{a}``.
    """

    market: MarketSpec
    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 0:
            raise ValueError("n must be a nonnegative integer")

    @property
    def degenerate(self) -> bool:
        return self.market.a == self.market.b

    @property
    def steps(self) -> int:
        """Number of grid intervals between a and b."""
        return 0 if self.degenerate else max(self.n, 1)

    @property
    def h(self) -> float:
        return 0.0 if self.degenerate else (self.market.b - self.market.a) / self.steps

    @property
    def magnitudes(self) -> tuple[float, ...]:
        a, b = self.market.a, self.market.b
        if self.degenerate:
            return (a,)
        return tuple(b if j == self.steps else a + j * self.h for j in range(self.steps + 1))

    @property
    def moves(self) -> tuple[Move, ...]:
        return _moves(self)

    @property
    def branching(self) -> int:
        return len(self.moves)

    @property
    def path_count(self) -> int:
        return self.branching ** self.market.N

    def move_by_label(self, label: str) -> Move:
        label = label.strip()
        if not label or label[0] not in "+-":
            raise ValueError(f"bad move label {label!r}")
        sign = -1 if label[0] == "-" else 1
        j = int(label[1:])
        if self.market.a == 0 and j == 0:
            sign = 0
        for mv in self.moves:
            if mv.j == j and mv.sign == sign:
                return mv
        raise ValueError(f"move label {label!r} not on the grid")

    def locate(self, log_increment: float, tol: float = DEFAULT_POLICY.grid_tol) -> Move | None:
        """Grid move whose log-increment matches within ``tol``, else None."""
        scale = max(1.0, self.market.b)
        for mv in self.moves:
            if abs(mv.log_increment - log_increment) <= tol * scale:
                return mv
        return None

    def project_indices(self, log_increments: np.ndarray) -> np.ndarray:
        """Vectorised projection of signed log-increments to move positions.

        Magnitudes are floored onto the grid; values within 1e-9 (relative to
        the grid step) of a grid point snap to it, and ``|x| = b`` clamps to
        the top index.
        """
        x = np.asarray(log_increments, dtype=float)
        a = self.market.a
        mag = np.abs(x)
        if self.degenerate:
            j = np.zeros(x.shape, dtype=np.int64)
        else:
            t = (mag - a) / self.h
            near = np.rint(t)
            t = np.where(np.abs(t - near) <= 1e-9, near, t)
            j = np.clip(np.floor(t), 0, self.steps).astype(np.int64)
        sign = np.where(x > 0, 1, -1)
        if a == 0:
            sign = np.where(j == 0, 0, sign)
        table = _position_table(self)
        return table[sign + 1, j]


@functools.lru_cache(maxsize=256)
def _moves(grid: GridSpec) -> tuple[Move, ...]:
    a = grid.market.a
    mags = grid.magnitudes
    raw: list[tuple[int, int, float]] = []
    for j, x in reversed(list(enumerate(mags))):
        if a == 0 and j == 0:
            continue
        raw.append((-1, j, -x))
    if a == 0:
        raw.append((0, 0, 0.0))
    for j, x in enumerate(mags):
        if a == 0 and j == 0:
            continue
        raw.append((1, j, x))
    return tuple(
        Move(position=i, sign=sg, j=j, log_increment=li, factor=math.exp(li))
        for i, (sg, j, li) in enumerate(raw)
    )


@functools.lru_cache(maxsize=256)
def _position_table(grid: GridSpec) -> np.ndarray:
    table = np.full((3, grid.steps + 1), -1, dtype=np.int64)
    for mv in grid.moves:
        table[mv.sign + 1, mv.j] = mv.position
    # stay move answers for both signs
    if grid.market.a == 0:
        table[0, 0] = table[2, 0] = table[1, 0]
    return table


class Lattice:
    """Node addressing, prices and level enumeration over a grid."""

    def __init__(self, grid: GridSpec, recombine: bool = False):
        self.grid = grid
        self.market = grid.market
        self.recombine = bool(recombine)
        self.moves = grid.moves
        self.factors = np.array([mv.factor for mv in self.moves])
        self._signs = [mv.sign for mv in self.moves]
        self._js = [mv.j for mv in self.moves]
        # the a-term is identically zero when a == 0
        self._track_m = grid.market.a != 0

    @property
    def root(self) -> tuple:
        return (0, 0, 0) if self.recombine else ()

    def child(self, key: tuple, position: int) -> tuple:
        if self.recombine:
            k, m, r = key
            sg = self._signs[position]
            return (k + 1, m + (sg if self._track_m else 0), r + sg * self._js[position])
        return key + (position,)

    def children(self, key: tuple) -> list[tuple]:
        return [self.child(key, i) for i in range(len(self.moves))]

    def depth(self, key: tuple) -> int:
        return key[0] if self.recombine else len(key)

    def _mr(self, key: tuple) -> tuple[int, int]:
        if self.recombine:
            return key[1], key[2]
        m = r = 0
        for pos in key:
            sg = self._signs[pos]
            if self._track_m:
                m += sg
            r += sg * self._js[pos]
        return m, r

    def price(self, key: tuple) -> float:
        m, r = self._mr(key)
        return self.market.s * math.exp(m * self.market.a + r * self.grid.h)

    def prefix_prices(self, key: tuple) -> np.ndarray:
        """Prices S_0..S_k along the node's history (full mode only)."""
        if self.recombine:
            raise ValueError("recombining lattice keeps no path history")
        return np.array([self.price(key[:i]) for i in range(len(key) + 1)])

    def label(self, key: tuple) -> str:
        if self.recombine:
            return f"k={key[0]};m={key[1]};r={key[2]}"
        return ",".join(self.moves[p].label for p in key)

    def key_of_positions(self, positions: Sequence[int]) -> tuple:
        key = self.root
        for p in positions:
            key = self.child(key, int(p))
        return key

    def node_count(self) -> int:
        """Number of nodes the lattice would hold, without building it."""
        m, N = len(self.moves), self.market.N
        if not self.recombine:
            return sum(m**k for k in range(N + 1))
        return sum(len(level) for level in self._recombined_levels())

    def _recombined_levels(self) -> list[list[tuple]]:
        levels = [[self.root]]
        for _ in range(self.market.N):
            seen: dict[tuple, None] = {}
            for key in levels[-1]:
                for i in range(len(self.moves)):
                    seen.setdefault(self.child(key, i), None)
            levels.append(list(seen))
        return levels

    def levels(self, cap: int | None = DEFAULT_NODE_CAP) -> list[list[tuple]]:
        """Node keys grouped by depth, in deterministic order."""
        if not self.recombine:
            total = self.node_count()
            if cap is not None and total > cap:
                raise CapExceeded("lattice nodes", total, cap)
            levels = [[self.root]]
            for _ in range(self.market.N):
                levels.append([key + (i,) for key in levels[-1] for i in range(len(self.moves))])
            return levels
        levels = self._recombined_levels()
        total = sum(len(lv) for lv in levels)
        if cap is not None and total > cap:
            raise CapExceeded("lattice nodes", total, cap)
        return levels


@dataclass(frozen=True)
class Path:
    """A price trajectory ``S_0..S_N``, optionally tagged with its lattice grid."""

    prices: tuple[float, ...]
    grid: GridSpec | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "prices", tuple(float(p) for p in self.prices))
        if self.grid is not None:
            self.validate(self.grid.market)

    @property
    def N(self) -> int:
        return len(self.prices) - 1

    @property
    def log_increments(self) -> np.ndarray:
        return np.diff(np.log(np.asarray(self.prices)))

    def validate(self, market: MarketSpec, tol: float = DEFAULT_POLICY.grid_tol) -> None:
        p = np.asarray(self.prices)
        if len(p) != market.N + 1:
            raise ValueError(f"path has {len(p)} prices, expected {market.N + 1}")
        if np.any(p <= 0):
            raise ValueError("prices must be positive")
        if abs(p[0] - market.s) > tol * market.s:
            raise ValueError("path must start at s")
        scale = max(1.0, market.b)
        for i, x in enumerate(self.log_increments):
            if not (market.a - tol * scale <= abs(x) <= market.b + tol * scale):
                raise ValueError(f"increment {i} magnitude {abs(x)} outside [a, b]")
            if self.grid is not None and self.grid.locate(x, tol) is None:
                raise ValueError(f"increment {i} = {x} is not on the n={self.grid.n} grid")

    def positions(self, grid: GridSpec | None = None) -> tuple[int, ...]:
        """Move positions of a lattice path."""
        grid = grid or self.grid
        if grid is None:
            raise ValueError("path carries no grid")
        out = []
        for x in self.log_increments:
            mv = grid.locate(x)
            if mv is None:
                raise ValueError(f"increment {x} is not on the grid")
            out.append(mv.position)
        return tuple(out)

    def labels(self, grid: GridSpec | None = None) -> str:
        grid = grid or self.grid
        if grid is None:
            raise ValueError("path carries no grid")
        return ",".join(grid.moves[p].label for p in self.positions(grid))

    def to_json(self) -> list[float]:
        return list(self.prices)


def lattice_prices(grid: GridSpec, positions: Sequence[int]) -> tuple[float, ...]:
    lat = Lattice(grid)
    return tuple(lat.price(tuple(positions[:i])) for i in range(len(positions) + 1))


def enumerate_lattice_paths(grid: GridSpec, cap: int = DEFAULT_PATH_CAP) -> Iterator[Path]:
    """Every lattice path exactly once, in lexicographic move-position order."""
    count = grid.path_count
    if count > cap:
        raise CapExceeded("lattice paths", count, cap)
    lat = Lattice(grid)
    for positions in itertools.product(range(grid.branching), repeat=grid.market.N):
        yield Path(tuple(lat.price(positions[:i]) for i in range(grid.market.N + 1)))


def project_to_lattice(grid: GridSpec, path: Path) -> Path:
    """Floor every increment magnitude of a continuum path onto the grid."""
    path.validate(grid.market)
    positions = grid.project_indices(path.log_increments)
    return Path(lattice_prices(grid, [int(p) for p in positions]), grid=grid)


@dataclass(frozen=True)
class PayoffSpec:
    """Adapted payoff pair ``(F_k, G_k)``.

    ``style`` selects how the cancellation payoff is formed: ``"game"`` uses
    ``G = F + penalty``; ``"american"`` uses the constant ``cancel_level``
    (large enough that cancellation never pays); ``"european"`` additionally
    zeroes ``F_k`` before maturity.  ``custom_table`` payoffs map signed
    move-label prefixes (``""`` for the root, ``"+0,-1"`` ...) to ``[F, G]``
    with an optional ``default`` entry.
    """

    family: str
    strike: float | None = None
    penalty: float = 0.0
    terminal_penalty_waived: bool = True
    style: str = "game"
    cancel_level: float | None = None
    table: Mapping[str, tuple[float, float]] | None = None
    default: tuple[float, float] | None = None
    _table: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown payoff family {self.family!r}")
        if self.style not in STYLES:
            raise ValueError(f"unknown payoff style {self.style!r}")
        if self.penalty < 0:
            raise ValueError("penalty must be nonnegative")
        if self.family in ("game_put", "game_call", "digital_game") and self.strike is None:
            raise ValueError(f"{self.family} needs a strike")
        if self.style != "game" and self.cancel_level is None:
            raise ValueError(f"style {self.style!r} needs cancel_level")
        if self.family == "custom_table":
            if not self.table and self.default is None:
                raise ValueError("custom_table needs table entries or a default")
            norm = {}
            for key, (f, g) in (self.table or {}).items():
                norm[_normalise_label_key(key)] = (float(f), float(g))
            object.__setattr__(self, "_table", norm)

    @classmethod
    def constant(cls, c: float) -> "PayoffSpec":
        return cls(family="custom_table", default=(float(c), float(c)))

    @property
    def is_markov(self) -> bool:
        """Payoff depends on the path only through (k, S_k)."""
        if self.family == "custom_table":
            return not self._table
        return self.family != "lookback_game"

    @property
    def is_continuous(self) -> bool:
        return self.family in ("game_put", "game_call", "lookback_game") or (
            self.family == "custom_table" and not self._table
        )

    @property
    def lipschitz(self) -> float:
        """Sup-norm Lipschitz constant of F and G in the price path (inf if discontinuous)."""
        if not self.is_continuous:
            return math.inf
        if self.family == "custom_table":
            return 0.0
        return 2.0 if self.family == "lookback_game" else 1.0

    def _intrinsic(self, prefix: np.ndarray):
        last = prefix[..., -1]
        if self.family == "game_put":
            return np.maximum(self.strike - last, 0.0)
        if self.family == "game_call":
            return np.maximum(last - self.strike, 0.0)
        if self.family == "digital_game":
            return (last >= self.strike).astype(float)
        return np.max(prefix, axis=-1) - last

    def evaluate(self, k: int, prefix, N: int, labels: str | None = None):
        """Return ``(F_k, G_k)`` from the price history ``prefix = S_0..S_k``.

        ``prefix`` may be a 1-D sequence or an array of shape ``(..., k+1)``;
        Markov families read only its last entry.  ``labels`` (the move-label
        prefix) is needed for table payoffs only.
        """
        if self.family == "custom_table":
            if labels is not None and labels in self._table:
                f, g = self._table[labels]
            elif self.default is not None:
                f, g = self.default
            else:
                raise KeyError(f"no table entry for node {labels!r}")
            if k == N and self.terminal_penalty_waived:
                g = f
            return float(f), float(g)
        p = np.asarray(prefix, dtype=float)
        base = self._intrinsic(p)
        if self.style == "game":
            f, g = base, base + self.penalty
        else:
            f = base if (self.style == "american" or k == N) else np.zeros_like(base)
            g = np.full_like(base, float(self.cancel_level))
        if k == N and self.terminal_penalty_waived:
            g = f
        if np.ndim(f) == 0:
            return float(f), float(g)
        return f, g

    def pair(self, k: int, path: Path, N: int | None = None, grid: GridSpec | None = None):
        """``(F_k, G_k)`` evaluated on a Path, using only ``prices[0..k]``."""
        N = path.N if N is None else N
        labels = None
        if self.family == "custom_table" and self._table:
            grid = grid or path.grid
            if grid is None:
                raise ValueError("table payoffs need a grid-tagged path")
            labels = Path(path.prices[: k + 1]).labels(grid) if k > 0 else ""
        return self.evaluate(k, path.prices[: k + 1], N, labels)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "family": self.family,
            "strike": self.strike,
            "penalty": self.penalty,
            "terminal_penalty_waived": self.terminal_penalty_waived,
            "style": self.style,
            "cancel_level": self.cancel_level,
        }
        if self.family == "custom_table":
            out["table"] = {k: list(v) for k, v in sorted(self._table.items())}
            out["default"] = list(self.default) if self.default is not None else None
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PayoffSpec":
        known = {"family", "strike", "penalty", "terminal_penalty_waived", "style", "cancel_level", "table", "default"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown payoff fields {sorted(extra)}")
        kw = dict(d)
        if kw.get("table") is not None:
            kw["table"] = {k: tuple(v) for k, v in kw["table"].items()}
        if kw.get("default") is not None:
            kw["default"] = tuple(kw["default"])
        return cls(**kw)


def _normalise_label_key(key: str) -> str:
    key = key.strip()
    if not key:
        return ""
    return ",".join(part.strip() for part in key.split(","))


def game_payoff(spec: PayoffSpec, k: int, l: int, path: Path, grid: GridSpec | None = None) -> float:
    """Buyer's reward when the seller cancels at ``k`` and the buyer exercises at ``l``."""
    N = path.N
    if not (0 <= k <= N and 0 <= l <= N):
        raise ValueError("stopping indices must lie in 0..N")
    if k < l:
        return spec.pair(k, path, N, grid)[1]
    return spec.pair(l, path, N, grid)[0]


def node_payoffs(spec: PayoffSpec, lattice: Lattice, key: tuple) -> tuple[float, float]:
    """``(F_k, G_k)`` at a lattice node, checking ``0 <= F <= G``."""
    k = lattice.depth(key)
    N = lattice.market.N
    if lattice.recombine:
        if not spec.is_markov:
            raise ValueError("recombining lattice needs a path-independent payoff")
        f, g = spec.evaluate(k, [lattice.price(key)], N, labels=None)
    else:
        f, g = spec.evaluate(k, lattice.prefix_prices(key), N, labels=lattice.label(key))
    if not (0.0 <= f <= g):
        raise PayoffOrderViolation(f"need 0 <= F <= G at node {lattice.label(key)!r}: F={f}, G={g}")
    return f, g


def payoff_bound(spec: PayoffSpec, grid: GridSpec, cap: int | None = DEFAULT_NODE_CAP) -> float:
    """Largest cancellation payoff G_k over all lattice nodes and times."""
    lat = Lattice(grid, recombine=spec.is_markov)
    best = 0.0
    for level in lat.levels(cap):
        for key in level:
            best = max(best, node_payoffs(spec, lat, key)[1])
    return best
