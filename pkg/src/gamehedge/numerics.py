"""Centralised numeric tolerances."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class NumericPolicy:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    # membership of a log-increment on the lattice grid
    grid_tol: float = 1e-12
    # probability simplex and mean-one checks on one-step measures
    measure_tol: float = 1e-10

    def __post_init__(self) -> None:
        for name in ("abs_tol", "rel_tol", "grid_tol", "measure_tol"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be nonnegative")

    def close(self, x: float, y: float) -> bool:
        return abs(x - y) <= self.abs_tol + self.rel_tol * max(abs(x), abs(y))


DEFAULT_POLICY = NumericPolicy()
