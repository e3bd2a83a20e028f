"""Present values of perpetual LP positions under European and American exit.

A European position is held until price leaves ``(L, H)``.  An American
position may be closed earlier at self-chosen levels ``L <= l1 < p < l2 <= H``;
its value is the maximum over those levels of the two-boundary value.

Fees accrue at the constant rate ``fee_annual * lq`` while the position is
open.  The alternative accrual proportional to the current LP value is not
implemented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .laplace import FeeMode, TransformInputs, _hit_pair, fee_leg, fee_leg_grid, hit_pair_grid
from .model import (
    DomainError,
    MarketParams,
    NormalizedPosition,
    log_coords_between,
    lp_payoff_v2,
    lp_payoff_v3,
)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class European:
    pass


@dataclass(frozen=True)
class American:
    """American exit; ``l1``/``l2`` are unit-price exit levels once chosen."""

    l1: float | None = None
    l2: float | None = None

    @property
    def has_boundaries(self) -> bool:
        return self.l1 is not None and self.l2 is not None


ExerciseStyle = Union[European, American]


@dataclass(frozen=True)
class OptimizerConfig:
    grid_n: int = 64
    refine_tol: float = 1e-10
    boundary_margin: float = 1e-6
    max_passes: int = 60

    def __post_init__(self) -> None:
        if self.grid_n < 8:
            raise DomainError(f"grid_n must be >= 8, got {self.grid_n}")
        if not self.refine_tol > 0:
            raise DomainError(f"refine_tol must be > 0, got {self.refine_tol}")
        if not 0 < self.boundary_margin < 1e-2:
            raise DomainError(f"boundary_margin must be in (0, 1e-2), got {self.boundary_margin}")


@dataclass(frozen=True)
class PricingResult:
    pv: float
    lp_leg: float
    fee_leg: float
    style: ExerciseStyle
    fee_mode: FeeMode
    stopped: bool = False
    exercise_now: bool = False

    @property
    def boundaries(self) -> tuple[float, float] | None:
        if isinstance(self.style, American) and self.style.has_boundaries:
            return self.style.l1, self.style.l2
        return None


class OptimizerError(RuntimeError):
    """Boundary search did not converge; carries the best point found."""

    def __init__(self, message: str, best_value: float, best_boundaries: tuple[float, float]):
        super().__init__(f"{message} (best value {best_value!r} at {best_boundaries!r})")
        self.best_value = best_value
        self.best_boundaries = best_boundaries


def two_boundary_value(
    p: float,
    lower: float,
    upper: float,
    value_lower: float,
    value_upper: float,
    market: MarketParams,
    fee_scale: float,
    mode: FeeMode,
) -> tuple[float, float]:
    """LP leg and fee leg of a claim paying ``value_*`` on first exit from (lower, upper)."""
    coords = log_coords_between(p, lower, upper, market)
    inp = TransformInputs(coords, market.r)
    up, lo = _hit_pair(inp)
    lp = value_upper * up + value_lower * lo
    fee = fee_leg(inp, fee_scale, market.fee_annual, mode)
    return lp, fee


def two_boundary_grid(
    p: float,
    lower: np.ndarray,
    upper: np.ndarray,
    value_lower: np.ndarray,
    value_upper: np.ndarray,
    market: MarketParams,
    fee_scale: float,
    mode: FeeMode,
) -> np.ndarray:
    """Array counterpart of :func:`two_boundary_value`, returning the total value."""
    sigma = market.sigma
    ap = np.log(p / lower) / sigma
    bp = np.log(upper / p) / sigma
    up, lo = hit_pair_grid(ap, bp, market.mu_prime, market.r)
    fee = fee_leg_grid(ap, bp, market.mu_prime, market.r, fee_scale, market.fee_annual, mode)
    return value_upper * up + value_lower * lo + fee


def _stopped(p: float, pos: NormalizedPosition, style: ExerciseStyle, mode: FeeMode) -> PricingResult:
    value = lp_payoff_v3(p, pos)
    return PricingResult(value, value, 0.0, style, mode, stopped=True)


def _check_spot(p: float) -> None:
    if not p > 0:
        raise DomainError(f"unit spot must be > 0, got {p}")


def price_european(
    pos: NormalizedPosition, market: MarketParams, p: float, mode: FeeMode
) -> PricingResult:
    _check_spot(p)
    if p <= pos.l or p >= pos.h:
        return _stopped(p, pos, European(), mode)
    lp, fee = two_boundary_value(
        p, pos.l, pos.h, lp_payoff_v3(pos.l, pos), pos.cap, market, pos.lq, mode
    )
    return PricingResult(lp + fee, lp, fee, European(), mode)


def price_at_boundaries(
    pos: NormalizedPosition,
    market: MarketParams,
    p: float,
    l1: float,
    l2: float,
    mode: FeeMode,
) -> PricingResult:
    """Value of holding until price first reaches ``l1`` or ``l2`` (L <= l1 < p < l2 <= H)."""
    _check_spot(p)
    if p <= pos.l or p >= pos.h:
        return _stopped(p, pos, American(l1, l2), mode)
    if not (pos.l <= l1 < p < l2 <= pos.h):
        raise DomainError(f"need L <= l1 < p < l2 <= H, got l1={l1}, p={p}, l2={l2}")
    lp, fee = two_boundary_value(
        p, l1, l2, lp_payoff_v3(l1, pos), lp_payoff_v3(l2, pos), market, pos.lq, mode
    )
    return PricingResult(lp + fee, lp, fee, American(l1, l2), mode)


def _golden_max(f: Callable[[float], float], lo: float, hi: float, xtol: float) -> tuple[float, float]:
    """Maximize a scalar function on [lo, hi]; endpoints are also candidates."""
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > xtol:
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = f(d)
    best = max(((fc, c), (fd, d), (f(lo), lo), (f(hi), hi)), key=lambda t: t[0])
    return best[1], best[0]


def _optimize_boundaries(
    objective: Callable[[float, float], float],
    p: float,
    l1_min: float,
    l2_max: float,
    cfg: OptimizerConfig,
    grid_objective: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> tuple[float, float, float]:
    """Grid search in log space followed by coordinate-wise golden-section refinement.

    ``grid_objective``, when given, evaluates the objective on whole arrays of
    exit levels for the grid stage.
    """
    eps = cfg.boundary_margin
    # search variables are log exit levels
    u_lo, u_hi = math.log(l1_min), math.log(p) + math.log1p(-eps)
    v_lo, v_hi = math.log(p) + math.log1p(eps), math.log(l2_max)
    us = np.linspace(u_lo, u_hi, cfg.grid_n)
    vs = np.linspace(v_lo, v_hi, cfg.grid_n)
    if grid_objective is None:
        grid = np.array([[objective(math.exp(u), math.exp(v)) for v in vs] for u in us])
    else:
        grid = grid_objective(np.exp(us)[:, None], np.exp(vs)[None, :])
    i, j = np.unravel_index(int(np.argmax(grid)), grid.shape)
    u, v, best = float(us[i]), float(vs[j]), float(grid[i, j])
    du, dv = us[1] - us[0], vs[1] - vs[0]
    xtol = 1e-12
    for _ in range(cfg.max_passes):
        prev = best
        u, _ = _golden_max(
            lambda s: objective(math.exp(s), math.exp(v)),
            max(u_lo, u - 2 * du), min(u_hi, u + 2 * du), xtol,
        )
        v, best = _golden_max(
            lambda s: objective(math.exp(u), math.exp(s)),
            max(v_lo, v - 2 * dv), min(v_hi, v + 2 * dv), xtol,
        )
        if abs(best - prev) <= cfg.refine_tol:
            return math.exp(u), math.exp(v), best
    raise OptimizerError("boundary refinement did not converge", best, (math.exp(u), math.exp(v)))


def price_american(
    pos: NormalizedPosition,
    market: MarketParams,
    p: float,
    mode: FeeMode,
    cfg: OptimizerConfig | None = None,
) -> PricingResult:
    """Value with optimally chosen exit levels inside the position range.

    The result is the best of the optimized two-boundary value, immediate
    exit, and the full-range European value.
    """
    cfg = cfg or OptimizerConfig()
    _check_spot(p)
    if p <= pos.l or p >= pos.h:
        return _stopped(p, pos, American(), mode)

    def objective(l1: float, l2: float) -> float:
        lp, fee = two_boundary_value(
            p, l1, l2, lp_payoff_v3(l1, pos), lp_payoff_v3(l2, pos), market, pos.lq, mode
        )
        return lp + fee

    def payoff(x: np.ndarray) -> np.ndarray:
        # grid levels stay within [L, H] up to rounding, where the payoff is continuous
        return pos.lq * (2.0 * np.sqrt(x) - math.sqrt(pos.l) - x / math.sqrt(pos.h))

    def grid_objective(l1: np.ndarray, l2: np.ndarray) -> np.ndarray:
        return two_boundary_grid(p, l1, l2, payoff(l1), payoff(l2), market, pos.lq, mode)

    l1, l2, _ = _optimize_boundaries(objective, p, pos.l, pos.h, cfg, grid_objective)
    candidates = [
        price_at_boundaries(pos, market, p, l1, l2, mode),
        price_at_boundaries(pos, market, p, pos.l, pos.h, mode),
    ]
    best = max(candidates, key=lambda res: res.pv)
    now = lp_payoff_v3(p, pos)
    if now > best.pv:
        return PricingResult(now, now, 0.0, American(p, p), mode, exercise_now=True)
    return best


def price_v2(
    market: MarketParams,
    p: float,
    l1: float,
    l2: float,
    mode: FeeMode,
    cfg: OptimizerConfig | None = None,
    optimize: bool = False,
) -> PricingResult:
    """Constant-product (V2) position closed when price first reaches ``l1`` or ``l2``.

    With ``optimize=True`` the levels are chosen to maximize value inside the
    search box ``[l1, l2]``.  Fees accrue at ``fee_annual`` per unit of
    position value, i.e. the fee multiplier is 1.
    """
    _check_spot(p)
    if not 0 < l1 < p < l2:
        raise DomainError(f"need 0 < l1 < p < l2, got l1={l1}, p={p}, l2={l2}")

    def legs(a: float, b: float) -> tuple[float, float]:
        return two_boundary_value(p, a, b, lp_payoff_v2(a), lp_payoff_v2(b), market, 1.0, mode)

    if optimize:
        cfg = cfg or OptimizerConfig()
        a, b, _ = _optimize_boundaries(
            lambda x, y: sum(legs(x, y)), p, l1, l2, cfg,
            lambda x, y: two_boundary_grid(p, x, y, np.sqrt(x), np.sqrt(y), market, 1.0, mode),
        )
        if sum(legs(l1, l2)) > sum(legs(a, b)):
            a, b = l1, l2
        now = lp_payoff_v2(p)
        if now > sum(legs(a, b)):
            return PricingResult(now, now, 0.0, American(p, p), mode, exercise_now=True)
        l1, l2 = a, b
    lp, fee = legs(l1, l2)
    return PricingResult(lp + fee, lp, fee, American(l1, l2), mode)


def price(
    pos: NormalizedPosition,
    market: MarketParams,
    p: float,
    style: ExerciseStyle,
    mode: FeeMode,
    cfg: OptimizerConfig | None = None,
) -> PricingResult:
    """Dispatch on exercise style; an American style with fixed levels is priced at them."""
    if isinstance(style, European):
        return price_european(pos, market, p, mode)
    if isinstance(style, American):
        if style.has_boundaries:
            return price_at_boundaries(pos, market, p, style.l1, style.l2, mode)
        return price_american(pos, market, p, mode, cfg)
    raise DomainError(f"unknown exercise style {style!r}")


def price_with_dynamic_fee(
    pos: NormalizedPosition,
    market: MarketParams,
    p: float,
    style: ExerciseStyle,
    mode: FeeMode,
    fee_fn: Callable[[float], float],
    cfg: OptimizerConfig | None = None,
) -> PricingResult:
    """Price with the annual fee rate set by a function of volatility."""
    rate = float(fee_fn(market.sigma))
    if not (rate >= 0 and math.isfinite(rate)):
        raise DomainError(f"fee function returned invalid rate {rate} at sigma={market.sigma}")
    return price(pos, market.replace(fee_annual=rate), p, style, mode, cfg)
