"""Run configuration: parsing and field-level validation of the JSON config file."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Any, Mapping

from .errors import ConfigError
from .market import DEFAULT_NODE_CAP, DEFAULT_PATH_CAP, MarketSpec, PayoffSpec
from .numerics import NumericPolicy

SCHEMA = "gamehedge.run/1"

_TOP_KEYS = {
    "schema", "market", "n_values", "payoff", "numeric", "epsilon", "samples", "seed",
    "caps", "recombine", "hedge", "oracle", "converge", "output",
}


@dataclass(frozen=True)
class Caps:
    paths: int = DEFAULT_PATH_CAP
    nodes: int = DEFAULT_NODE_CAP
    vertex_trees: int = 10**5
    stopping_times: int = 10**4
    i_know: bool = False


@dataclass(frozen=True)
class HedgeOptions:
    capital: float | None = None
    capital_scale: float | None = None
    slack: float = 1e-9
    adversary_mode: str = "auto"
    bisection_tol: float = 1e-6


@dataclass(frozen=True)
class OracleOptions:
    mode: str = "auto"
    trees: int = 10_000
    minimax_draws: int = 200


@dataclass(frozen=True)
class RunConfig:
    market: MarketSpec
    n_values: tuple[int, ...]
    payoff: PayoffSpec
    numeric: NumericPolicy = NumericPolicy()
    epsilon: float = 0.0
    samples: int = 10_000
    seed: int = 0
    caps: Caps = Caps()
    recombine: bool = False
    hedge: HedgeOptions = HedgeOptions()
    oracle: OracleOptions = OracleOptions()
    epsilon_targets: tuple[float, ...] = ()
    output_path: str | None = None
    output_format: str = "json"
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False)


def _section(d: Mapping[str, Any], name: str, allowed: set[str]) -> dict:
    sec = d.get(name) or {}
    if not isinstance(sec, Mapping):
        raise ConfigError(name, "must be an object")
    extra = set(sec) - allowed
    if extra:
        raise ConfigError(f"{name}.{sorted(extra)[0]}", "unknown field")
    return dict(sec)


def _num(sec: Mapping, prefix: str, key: str, default=None, *, kind=float, required=False):
    if key not in sec or sec[key] is None:
        if required:
            raise ConfigError(f"{prefix}{key}", "is required")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{prefix}{key}", f"expected a number, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise ConfigError(f"{prefix}{key}", f"expected an integer, got {v!r}")
        return int(v)
    return float(v)


def parse_config(d: Mapping[str, Any]) -> RunConfig:
    """Validate a config mapping; raises ConfigError naming the bad field."""
    if not isinstance(d, Mapping):
        raise ConfigError("<root>", "config must be a JSON object")
    extra = set(d) - _TOP_KEYS
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown field")
    if d.get("schema") != SCHEMA:
        raise ConfigError("schema", f"expected {SCHEMA!r}, got {d.get('schema')!r}")

    msec = _section(d, "market", {"s", "a", "b", "N"})
    try:
        market = MarketSpec(
            s=_num(msec, "market.", "s", required=True),
            a=_num(msec, "market.", "a", required=True),
            b=_num(msec, "market.", "b", required=True),
            N=_num(msec, "market.", "N", kind=int, required=True),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("market", str(exc)) from None

    nv = d.get("n_values")
    if not isinstance(nv, list) or not nv:
        raise ConfigError("n_values", "must be a nonempty list")
    if any(isinstance(x, bool) or not isinstance(x, int) or x < 0 for x in nv):
        raise ConfigError("n_values", "entries must be nonnegative integers")
    if list(nv) != sorted(nv):
        raise ConfigError("n_values", "must be sorted")

    psec = d.get("payoff")
    if not isinstance(psec, Mapping):
        raise ConfigError("payoff", "is required")
    try:
        payoff = PayoffSpec.from_dict(psec)
    except (TypeError, ValueError) as exc:
        raise ConfigError("payoff", str(exc)) from None

    nsec = _section(d, "numeric", {"abs_tol", "rel_tol", "grid_tol", "measure_tol"})
    try:
        numeric = NumericPolicy(**{k: _num(nsec, "numeric.", k) for k in nsec})
    except ValueError as exc:
        raise ConfigError("numeric", str(exc)) from None

    epsilon = _num(d, "", "epsilon", 0.0)
    if epsilon < 0:
        raise ConfigError("epsilon", "must be nonnegative")
    samples = _num(d, "", "samples", 10_000, kind=int)
    if samples < 1:
        raise ConfigError("samples", "must be positive")
    seed = _num(d, "", "seed", 0, kind=int)

    csec = _section(d, "caps", {"paths", "nodes", "vertex_trees", "stopping_times", "i_know"})
    i_know = bool(csec.get("i_know", False))
    caps = Caps(
        paths=_num(csec, "caps.", "paths", DEFAULT_PATH_CAP, kind=int),
        nodes=_num(csec, "caps.", "nodes", DEFAULT_NODE_CAP, kind=int),
        vertex_trees=_num(csec, "caps.", "vertex_trees", Caps.vertex_trees, kind=int),
        stopping_times=_num(csec, "caps.", "stopping_times", Caps.stopping_times, kind=int),
        i_know=i_know,
    )
    if not i_know:
        if caps.paths > DEFAULT_PATH_CAP:
            raise ConfigError("caps.paths", "raising above the default needs caps.i_know = true")
        if caps.nodes > DEFAULT_NODE_CAP:
            raise ConfigError("caps.nodes", "raising above the default needs caps.i_know = true")

    recombine = d.get("recombine", False)
    if recombine not in (True, False, "auto"):
        raise ConfigError("recombine", "must be true, false or 'auto'")
    if recombine == "auto":
        recombine = payoff.is_markov
    if recombine and not payoff.is_markov:
        raise ConfigError("recombine", f"payoff family {payoff.family!r} is path-dependent")

    hsec = _section(d, "hedge", {"capital", "capital_scale", "slack", "adversary_mode", "bisection_tol"})
    mode = hsec.get("adversary_mode", "auto")
    if mode not in ("auto", "exhaustive", "greedy"):
        raise ConfigError("hedge.adversary_mode", "must be auto, exhaustive or greedy")
    hedge = HedgeOptions(
        capital=_num(hsec, "hedge.", "capital"),
        capital_scale=_num(hsec, "hedge.", "capital_scale"),
        slack=_num(hsec, "hedge.", "slack", 1e-9),
        adversary_mode=mode,
        bisection_tol=_num(hsec, "hedge.", "bisection_tol", 1e-6),
    )
    if hedge.capital is not None and hedge.capital_scale is not None:
        raise ConfigError("hedge.capital", "give capital or capital_scale, not both")

    osec = _section(d, "oracle", {"mode", "trees", "minimax_draws"})
    omode = osec.get("mode", "auto")
    if omode not in ("auto", "exhaustive", "sampling"):
        raise ConfigError("oracle.mode", "must be auto, exhaustive or sampling")
    oracle = OracleOptions(
        mode=omode,
        trees=_num(osec, "oracle.", "trees", 10_000, kind=int),
        minimax_draws=_num(osec, "oracle.", "minimax_draws", 200, kind=int),
    )

    gsec = _section(d, "converge", {"epsilon_targets"})
    targets = gsec.get("epsilon_targets") or ([epsilon, epsilon / 2, epsilon / 4] if epsilon > 0 else [])
    if any(isinstance(t, bool) or not isinstance(t, (int, float)) or t <= 0 for t in targets):
        raise ConfigError("converge.epsilon_targets", "entries must be positive numbers")

    out = _section(d, "output", {"path", "format"})
    fmt = out.get("format", "json")
    if fmt not in ("json", "csv"):
        raise ConfigError("output.format", "must be json or csv")

    return RunConfig(
        market=market,
        n_values=tuple(nv),
        payoff=payoff,
        numeric=numeric,
        epsilon=epsilon,
        samples=samples,
        seed=seed,
        caps=caps,
        recombine=bool(recombine),
        hedge=hedge,
        oracle=oracle,
        epsilon_targets=tuple(float(t) for t in targets),
        output_path=out.get("path"),
        output_format=fmt,
        raw=dict(d),
    )


def load_config(path: str | FsPath) -> RunConfig:
    try:
        text = FsPath(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(data)
