"""Valuation of concentrated-liquidity range positions under geometric Brownian motion."""

from .laplace import FeeMode
from .model import (
    DomainError,
    InvalidPositionError,
    MarketParams,
    NormalizedPosition,
    PositionSpec,
    lp_payoff_v2,
    lp_payoff_v3,
    normalize_position,
)
from .pricer import American, European, OptimizerConfig, price, price_american, price_european

__all__ = [
    "American",
    "DomainError",
    "European",
    "FeeMode",
    "InvalidPositionError",
    "MarketParams",
    "NormalizedPosition",
    "OptimizerConfig",
    "PositionSpec",
    "lp_payoff_v2",
    "lp_payoff_v3",
    "normalize_position",
    "price",
    "price_american",
    "price_european",
]
