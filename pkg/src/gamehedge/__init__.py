"""Robust super-replication of game (Israeli) options on multinomial lattices."""

__version__ = "0.1.0"

from .errors import CapExceeded, ConfigError, NoMartingaleMeasure, PayoffOrderViolation
from .market import (
    GridSpec,
    Lattice,
    MarketSpec,
    Path,
    PayoffSpec,
    enumerate_lattice_paths,
    payoff_bound,
    game_payoff,
    project_to_lattice,
)
from .numerics import NumericPolicy
from .robust_step import FactorSet, OneStepMeasure, one_step_superhedge, robust_sup, sample_measure
from .dynkin import (
    MeasureTree,
    Region,
    StoppingPolicy,
    ValueTree,
    extract_measure,
    extract_stopping,
    fixed_measure_dynkin,
    robust_price,
)
from .hedging import (
    HedgePolicy,
    HedgeReport,
    PortfolioTrajectory,
    adversary_search,
    build_hedge,
    lift_and_verify_continuum,
    minimal_capital,
    verify_on_lattice,
)
