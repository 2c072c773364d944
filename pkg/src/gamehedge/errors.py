"""Exception types raised by the pricing and hedging engine."""

from __future__ import annotations


class GameHedgeError(Exception):
    """Base class for all engine errors."""


class CapExceeded(GameHedgeError, RuntimeError):
    """An enumeration or tree would exceed the configured size cap."""

    def __init__(self, what: str, count: int, cap: int):
        super().__init__(f"{what}: {count} exceeds cap {cap}")
        self.what = what
        self.count = count
        self.cap = cap


class NoMartingaleMeasure(GameHedgeError, ValueError):
    """All successor factors lie strictly on one side of 1."""


class PayoffOrderViolation(GameHedgeError, ValueError):
    """F_k > G_k at some node, or a payoff is negative."""


class ConfigError(GameHedgeError, ValueError):
    """A run configuration failed validation.

    ``field`` names the offending entry using dotted notation
    (e.g. ``"market.b"``).
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
