"""Parameter containers, unit-price normalization and LP payoff functions.

Every price inside the library is a *unit* price, i.e. spot divided by the
inception price ``s0``.  A position is therefore worth exactly 1 at inception.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a formula."""


class InvalidPositionError(DomainError):
    """Raised when position bounds are not strictly ordered around s0."""


@dataclass(frozen=True)
class MarketParams:
    """Market inputs: drift, volatility, risk-free rate and annual fee rate."""

    mu: float
    sigma: float
    r: float
    fee_annual: float = 0.0

    def __post_init__(self) -> None:
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        if not self.r >= 0:
            raise DomainError(f"r must be >= 0, got {self.r}")
        if not self.fee_annual >= 0:
            raise DomainError(f"fee_annual must be >= 0, got {self.fee_annual}")
        if not math.isfinite(self.mu):
            raise DomainError(f"mu must be finite, got {self.mu}")

    @property
    def fee_daily(self) -> float:
        return self.fee_annual / 365.0

    @property
    def mu_prime(self) -> float:
        """Drift of the log price measured in volatility units."""
        return self.mu / self.sigma - self.sigma / 2.0

    def replace(self, **changes: float) -> "MarketParams":
        fields = {"mu": self.mu, "sigma": self.sigma, "r": self.r, "fee_annual": self.fee_annual}
        fields.update(changes)
        return MarketParams(**fields)


@dataclass(frozen=True)
class PositionSpec:
    s0: float
    s_low: float
    s_high: float


@dataclass(frozen=True)
class NormalizedPosition:
    """Position bounds in unit price plus the liquidity parameter."""

    l: float
    h: float
    lq: float = field(init=False)

    def __post_init__(self) -> None:
        if not (0 < self.l < 1 < self.h):
            raise InvalidPositionError(
                f"unit bounds must satisfy 0 < l < 1 < h, got l={self.l}, h={self.h}"
            )
        object.__setattr__(self, "lq", liquidity_parameter(self.l, self.h))

    @property
    def cap(self) -> float:
        """Value of the position once price is at or above the upper bound."""
        return self.lq * (math.sqrt(self.h) - math.sqrt(self.l))

    @property
    def floor_slope(self) -> float:
        """Slope of the payoff below the lower bound (units of base asset held)."""
        return self.lq * (1.0 / math.sqrt(self.l) - 1.0 / math.sqrt(self.h))


@dataclass(frozen=True)
class LogCoords:
    x: float
    a: float
    b: float
    a_prime: float
    b_prime: float
    mu_prime: float

    @property
    def width(self) -> float:
        return self.b - self.a

    @property
    def live(self) -> bool:
        return self.a < self.x < self.b


def liquidity_parameter(l: float, h: float) -> float:
    return 1.0 / (2.0 - math.sqrt(l) - 1.0 / math.sqrt(h))


def normalize_position(spec: PositionSpec) -> NormalizedPosition:
    if not spec.s0 > 0:
        raise InvalidPositionError(f"s0 must be > 0, got {spec.s0}")
    if not spec.s_low > 0:
        raise InvalidPositionError(f"s_low must be > 0, got {spec.s_low}")
    if not spec.s_low < spec.s0:
        raise InvalidPositionError(f"s_low must be < s0 (s_low={spec.s_low}, s0={spec.s0})")
    if not spec.s0 < spec.s_high:
        raise InvalidPositionError(f"s_high must be > s0 (s_high={spec.s_high}, s0={spec.s0})")
    return NormalizedPosition(spec.s_low / spec.s0, spec.s_high / spec.s0)


def _check_price(p: float) -> None:
    if not p > 0:
        raise DomainError(f"unit price must be > 0, got {p}")


def log_coords(p: float, pos: NormalizedPosition, market: MarketParams) -> LogCoords:
    return log_coords_between(p, pos.l, pos.h, market)


def log_coords_between(p: float, lower: float, upper: float, market: MarketParams) -> LogCoords:
    """Log coordinates of ``p`` relative to arbitrary exit levels ``lower < upper``."""
    _check_price(p)
    if not 0 < lower < upper:
        raise DomainError(f"need 0 < lower < upper, got {lower}, {upper}")
    sigma = market.sigma
    x = math.log(p) / sigma
    a = math.log(lower) / sigma
    b = math.log(upper) / sigma
    # log(p / lower) keeps a' exact when p sits close to a bound
    a_prime = math.log(p / lower) / sigma
    b_prime = math.log(upper / p) / sigma
    return LogCoords(x, a, b, a_prime, b_prime, market.mu_prime)


def lp_payoff_v3(p: float, pos: NormalizedPosition) -> float:
    """Unit value of a concentrated-liquidity position at unit price ``p``."""
    _check_price(p)
    if p <= pos.l:
        return p * pos.floor_slope
    if p >= pos.h:
        return pos.cap
    return pos.lq * (2.0 * math.sqrt(p) - math.sqrt(pos.l) - p / math.sqrt(pos.h))


def lp_payoff_v2(p: float) -> float:
    """Constant-product position value, normalized to 1 at inception."""
    _check_price(p)
    return math.sqrt(p)


@dataclass(frozen=True)
class GreeksReport:
    pv: float
    delta: float
    gamma: float
    vega: float = math.nan
    rho: float = math.nan
    flags: frozenset[str] = frozenset()

    def spot_delta(self, s0: float) -> float:
        """Delta per unit of spot (quote currency) instead of per unit price."""
        return self.delta / s0

    def spot_gamma(self, s0: float) -> float:
        return self.gamma / (s0 * s0)


def payoff_greeks(p: float, pos: NormalizedPosition) -> GreeksReport:
    """Analytic delta and gamma of the V3 payoff; vega and rho are undefined.

    Exactly at a kink the one-sided value from inside the range is reported
    and the ``at_kink`` flag is set.
    """
    _check_price(p)
    flags = {"undefined_vega", "undefined_rho"}
    if p == pos.l or p == pos.h:
        flags.add("at_kink")
    if pos.l <= p <= pos.h:
        delta = pos.lq * (1.0 / math.sqrt(p) - 1.0 / math.sqrt(pos.h))
        gamma = -pos.lq / (2.0 * p**1.5)
    elif p < pos.l:
        delta, gamma = pos.floor_slope, 0.0
    else:
        delta, gamma = 0.0, 0.0
    return GreeksReport(lp_payoff_v3(p, pos), delta, gamma, flags=frozenset(flags))
