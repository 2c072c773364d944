"""Command-line front end.

    gamehedge price|hedge|verify|adversary|oracle|converge --config FILE
              [--out FILE] [--format json|csv] [--seed INT]

Exit codes: 0 success, 1 verification failure, 2 config error, 3 cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from typing import Any, Callable

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .dynkin import extract_measure, fixed_measure_dynkin, robust_price, sample_measure_tree
from .errors import CapExceeded, ConfigError
from .hedging import (
    HedgePolicy,
    adversary_search,
    build_hedge,
    empirical_modulus,
    lift_and_verify_continuum,
    minimal_capital,
    position_bound_constant,
    position_bound_violations,
    required_n,
    verify_on_lattice,
)
from .market import GridSpec, payoff_bound
from .oracles import (
    sampled_tree_max,
    stopping_time_count,
    superreplication_lp,
    vertex_tree_count,
    vertex_tree_max,
)

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_CAP = 0, 1, 2, 3


def _grid(cfg: RunConfig, n: int) -> GridSpec:
    return GridSpec(cfg.market, n)


def _solve(cfg: RunConfig, grid: GridSpec):
    return robust_price(grid, cfg.payoff, recombine=cfg.recombine, policy=cfg.numeric, cap=cfg.caps.nodes)


def _payoff_bound(cfg: RunConfig, grid: GridSpec) -> float:
    return payoff_bound(cfg.payoff, grid, cap=cfg.caps.nodes)


def cmd_price(cfg: RunConfig) -> tuple[dict, list[dict], int]:
    rows = []
    for n in cfg.n_values:
        grid = _grid(cfg, n)
        tree = _solve(cfg, grid)
        fixed = fixed_measure_dynkin(grid, cfg.payoff, extract_measure(tree), "infsup", cap=cfg.caps.nodes)
        counts = tree.region_counts()
        rows.append({
            "n": n,
            "value": tree.root_value,
            "root_region": tree.root.region.value,
            "buyer_stop_nodes": counts["BUYER_STOP"],
            "seller_cancel_nodes": counts["SELLER_CANCEL"],
            "continue_nodes": counts["CONTINUE"],
            "extracted_measure_value": fixed.root_value,
            "self_consistency_gap": fixed.root_value - tree.root_value,
        })
    return {"rows": rows}, rows, EXIT_OK


def _hedge_for(cfg: RunConfig, grid: GridSpec) -> tuple[Any, HedgePolicy, HedgePolicy, dict]:
    tree = _solve(cfg, grid)
    hedge = build_hedge(tree, policy=cfg.numeric)
    A = _payoff_bound(cfg, grid)
    summary = {
        "n": grid.n,
        "value": tree.root_value,
        "capital": hedge.initial_capital,
        "max_abs_gamma": hedge.max_abs_gamma,
        "payoff_bound": A,
        "position_bound": position_bound_constant(A, cfg.market),
        "position_bound_violations": len(position_bound_violations(hedge, A)),
        "cancel_region_size": hedge.cancel.region_size,
    }
    tested = hedge
    if cfg.hedge.capital is not None:
        tested = hedge.with_capital(cfg.hedge.capital)
    elif cfg.hedge.capital_scale is not None:
        tested = hedge.with_capital(cfg.hedge.capital_scale * hedge.initial_capital)
    summary["tested_capital"] = tested.initial_capital
    return tree, hedge, tested, summary


def _report_rows(n: int, report) -> list[dict]:
    return [{"n": n, "path": p, "exercise_index": l, "margin": m} for p, l, m in report.rows]


def cmd_hedge(cfg: RunConfig) -> tuple[dict, list[dict], int]:
    out, table, code = [], [], EXIT_OK
    for n in cfg.n_values:
        grid = _grid(cfg, n)
        tree, hedge, tested, summary = _hedge_for(cfg, grid)
        report = verify_on_lattice(tested, grid, cfg.payoff, cfg.hedge.slack, cap=cfg.caps.paths)
        summary["report"] = report.to_dict()
        summary["gamma"] = {tree.lattice.label(k): g for k, g in hedge.gamma.items()}
        summary["cancel_nodes"] = sorted(tree.lattice.label(k) for k, v in hedge.cancel.stop.items() if v)
        if not report.is_perfect(cfg.hedge.slack) or summary["position_bound_violations"]:
            code = EXIT_VERIFY
        out.append(summary)
        table += _report_rows(n, report)
    return {"rows": out}, table, code


def cmd_verify(cfg: RunConfig) -> tuple[dict, list[dict], int]:
    out, table, code = [], [], EXIT_OK
    for n in cfg.n_values:
        grid = _grid(cfg, n)
        _, hedge, tested, summary = _hedge_for(cfg, grid)
        report = verify_on_lattice(tested, grid, cfg.payoff, cfg.hedge.slack, cap=cfg.caps.paths)
        summary["report"] = report.to_dict()
        summary["minimal_capital"] = minimal_capital(
            hedge, grid, cfg.payoff, tol=cfg.hedge.bisection_tol, slack=cfg.hedge.slack, cap=cfg.caps.paths
        )
        if not report.is_perfect(cfg.hedge.slack):
            code = EXIT_VERIFY
        if cfg.epsilon > 0 and (cfg.payoff.is_continuous or cfg.payoff.family == "digital_game"):
            lift = lift_and_verify_continuum(tested, grid, cfg.payoff, cfg.epsilon, cfg.samples, cfg.seed)
            M = summary["position_bound"]
            need = required_n(cfg.epsilon, cfg.market, M, cfg.payoff.lipschitz) if cfg.payoff.is_continuous else None
            guaranteed = need is not None and n >= need
            summary["continuum"] = {
                **lift.to_dict(),
                "epsilon": cfg.epsilon,
                "required_n": need,
                "guaranteed": guaranteed,
            }
            if guaranteed and not lift.is_perfect(cfg.hedge.slack):
                code = EXIT_VERIFY
        out.append(summary)
        table += _report_rows(n, report)
    return {"rows": out}, table, code


def cmd_adversary(cfg: RunConfig) -> tuple[dict, list[dict], int]:
    out, table, code = [], [], EXIT_OK
    for n in cfg.n_values:
        grid = _grid(cfg, n)
        _, _, tested, summary = _hedge_for(cfg, grid)
        report = adversary_search(tested, grid, cfg.payoff, mode=cfg.hedge.adversary_mode, cap=cfg.caps.paths)
        summary["report"] = report.to_dict()
        summary["witness_labels"] = report.worst_path.labels(grid)
        if not report.is_perfect(cfg.hedge.slack):
            code = EXIT_VERIFY
        out.append(summary)
        table += _report_rows(n, report)
    return {"rows": out}, table, code


def cmd_oracle(cfg: RunConfig) -> tuple[dict, list[dict], int]:
    rows, minimax, code = [], [], EXIT_OK
    tol = cfg.numeric.abs_tol
    for n in cfg.n_values:
        grid = _grid(cfg, n)
        tree = _solve(cfg, grid)
        count = vertex_tree_count(grid)
        mode = cfg.oracle.mode
        if mode == "auto":
            mode = "exhaustive" if count <= cfg.caps.vertex_trees else "sampling"
        if mode == "exhaustive":
            best, _ = vertex_tree_max(grid, cfg.payoff, cap=cfg.caps.vertex_trees)
            checked = count
        else:
            best = sampled_tree_max(grid, cfg.payoff, cfg.oracle.trees, cfg.seed)
            checked = cfg.oracle.trees
        row = {
            "n": n,
            "mode": mode,
            "trees_checked": checked,
            "oracle_max": best,
            "robust_value": tree.root_value,
            "gap": tree.root_value - best,
        }
        if stopping_time_count(grid) <= cfg.caps.stopping_times:
            row["primal_lp_value"] = superreplication_lp(grid, cfg.payoff, cap=cfg.caps.stopping_times)
        failed = best > tree.root_value + tol or (mode == "exhaustive" and abs(row["gap"]) > tol)
        row["pass"] = not failed
        if failed:
            code = EXIT_VERIFY
        rows.append(row)
        rng = np.random.default_rng(cfg.seed)
        worst = 0.0
        for _ in range(cfg.oracle.minimax_draws):
            mt = sample_measure_tree(grid, rng, recombine=cfg.recombine, cap=cfg.caps.nodes)
            lo = fixed_measure_dynkin(grid, cfg.payoff, mt, "supinf", cap=cfg.caps.nodes).root_value
            hi = fixed_measure_dynkin(grid, cfg.payoff, mt, "infsup", cap=cfg.caps.nodes).root_value
            worst = max(worst, abs(hi - lo))
        minimax.append({"n": n, "draws": cfg.oracle.minimax_draws, "max_order_gap": worst, "pass": worst <= tol})
        if worst > tol:
            code = EXIT_VERIFY
    return {"rows": rows, "minimax": minimax}, rows, code


def cmd_converge(cfg: RunConfig) -> tuple[dict, list[dict], int]:
    if len(cfg.n_values) < 3:
        raise ConfigError("n_values", "converge needs at least 3 refinements")
    values = []
    for n in cfg.n_values:
        values.append(_solve(cfg, _grid(cfg, n)).root_value)
    rows = []
    for i, (n, v) in enumerate(zip(cfg.n_values, values)):
        diff = None if i == 0 else v - values[i - 1]
        rows.append({"n": n, "value": v, "difference": diff})
    nested = []
    for i, n in enumerate(cfg.n_values):
        for j in range(i + 1, len(cfg.n_values)):
            m = cfg.n_values[j]
            if n > 0 and m % n == 0:
                nested.append({"n": n, "m": m, "nondecreasing": values[j] >= values[i] - cfg.numeric.abs_tol})
    budget = []
    if cfg.payoff.family != "custom_table" or cfg.payoff.is_markov:
        modulus = empirical_modulus(cfg.payoff, cfg.market, cfg.samples, cfg.seed)
        A = _payoff_bound(cfg, _grid(cfg, cfg.n_values[0]))
        M = position_bound_constant(A, cfg.market)
        for eps in cfg.epsilon_targets:
            need = required_n(eps, cfg.market, M, modulus) if math.isfinite(modulus) else None
            budget.append({"epsilon": eps, "payoff_modulus": modulus, "position_bound": M, "required_n": need})
    return {"rows": rows, "nested_monotone": nested, "epsilon_budget": budget}, rows, EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig], tuple[dict, list[dict], int]]] = {
    "price": cmd_price,
    "hedge": cmd_hedge,
    "verify": cmd_verify,
    "adversary": cmd_adversary,
    "oracle": cmd_oracle,
    "converge": cmd_converge,
}


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def render(command: str, cfg: RunConfig, results: dict, table: list[dict], code: int, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        if table:
            cols = list(dict.fromkeys(k for row in table for k in row))
            w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in table:
                w.writerow({k: _jsonable(v) for k, v in row.items()})
        return buf.getvalue()
    doc = {
        "artifact": "gamehedge",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "exit_status": code,
        "config": cfg.raw,
        "results": results,
    }
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def run(command: str, cfg: RunConfig, fmt: str | None = None) -> tuple[str, int]:
    results, table, code = COMMANDS[command](cfg)
    return render(command, cfg, results, table, code, fmt or cfg.output_format), code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gamehedge", description="Robust pricing and hedging of game options on lattices.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="write the result document here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--seed", type=int)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            raw = dict(cfg.raw)
            raw["seed"] = args.seed
            cfg = replace(cfg, seed=args.seed, raw=raw)
        text, code = run(args.command, cfg, args.format)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapExceeded as exc:
        print(f"cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    out = args.out or cfg.output_path
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
