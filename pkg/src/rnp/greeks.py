"""Bump-and-reprice Greeks and the Payoff / European / American comparison table."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .laplace import FeeMode
from .model import GreeksReport, MarketParams, NormalizedPosition, payoff_greeks
from .pricer import OptimizerConfig, price_american, price_european

PricingFn = Callable[[float, float, float], float]

GREEKS_COLUMNS = ["model", "pv", "delta", "gamma", "vega", "rho"]


@dataclass(frozen=True)
class BumpConfig:
    h_spot_rel: float = 1e-4
    h_sigma: float = 1e-4
    h_r: float = 1e-5

    def __post_init__(self) -> None:
        for name in ("h_spot_rel", "h_sigma", "h_r"):
            value = getattr(self, name)
            if not 0 < value < 1e-2:
                raise ValueError(f"{name} must be in (0, 1e-2), got {value}")


class BumpError(RuntimeError):
    """A bumped model evaluation failed."""


def _eval(model: PricingFn, p: float, sigma: float, r: float, what: str) -> float:
    try:
        return float(model(p, sigma, r))
    except Exception as exc:
        raise BumpError(f"model failed at {what} (p={p}, sigma={sigma}, r={r}): {exc}") from exc


def _first_second(
    f: Callable[[float], float], x: float, h: float, lo: float, hi: float
) -> tuple[float, float, bool]:
    """Central first/second differences, falling back to one-sided ones near ``lo``/``hi``."""
    if x - h > lo and x + h < hi:
        up, mid, dn = f(x + h), f(x), f(x - h)
        return (up - dn) / (2 * h), (up - 2 * mid + dn) / (h * h), False
    if x + 2 * h < hi and x - h <= lo:
        f0, f1, f2 = f(x), f(x + h), f(x + 2 * h)
        return (-3 * f0 + 4 * f1 - f2) / (2 * h), (f0 - 2 * f1 + f2) / (h * h), True
    f0, f1, f2 = f(x), f(x - h), f(x - 2 * h)
    return (3 * f0 - 4 * f1 + f2) / (2 * h), (f0 - 2 * f1 + f2) / (h * h), True


def fd_greeks(
    model: PricingFn,
    p: float,
    sigma: float,
    r: float,
    cfg: BumpConfig | None = None,
    live: tuple[float, float] | None = None,
) -> GreeksReport:
    """Finite-difference Greeks of ``model(p, sigma, r)``, per unit of each variable.

    ``live`` is the open spot interval on which the model is smooth; bumps that
    would leave it switch to one-sided differences and set ``boundary_clipped``.
    """
    cfg = cfg or BumpConfig()
    lo, hi = live if live is not None else (0.0, math.inf)
    flags = set()
    pv = _eval(model, p, sigma, r, "base point")

    h = cfg.h_spot_rel * p
    delta, gamma, clipped = _first_second(
        lambda x: _eval(model, x, sigma, r, f"spot bump {x - p:+.3g}"), p, h, lo, hi
    )
    if clipped:
        flags.add("boundary_clipped")
    vega, _, _ = _first_second(
        lambda s: _eval(model, p, s, r, f"sigma bump {s - sigma:+.3g}"), sigma, cfg.h_sigma, 0.0, math.inf
    )
    rho, _, r_clipped = _first_second(
        lambda q: _eval(model, p, sigma, q, f"rate bump {q - r:+.3g}"), r, cfg.h_r, -cfg.h_r / 2, math.inf
    )
    if r_clipped:
        flags.add("rate_one_sided")
    return GreeksReport(pv, delta, gamma, vega, rho, frozenset(flags))


def european_model(
    pos: NormalizedPosition, market: MarketParams, mode: FeeMode
) -> PricingFn:
    def model(p: float, sigma: float, r: float) -> float:
        return price_european(pos, market.replace(sigma=sigma, r=r), p, mode).pv

    return model


def american_model(
    pos: NormalizedPosition,
    market: MarketParams,
    mode: FeeMode,
    cfg: OptimizerConfig | None = None,
) -> PricingFn:
    """American value as a function of (p, sigma, r); exit levels are re-optimized per call."""

    def model(p: float, sigma: float, r: float) -> float:
        return price_american(pos, market.replace(sigma=sigma, r=r), p, mode, cfg).pv

    return model


@dataclass(frozen=True)
class GreeksRow:
    model: str
    report: GreeksReport

    def values(self) -> list[float]:
        g = self.report
        return [g.pv, g.delta, g.gamma, g.vega, g.rho]


def greeks_rows(
    pos: NormalizedPosition,
    market: MarketParams,
    p: float,
    mode: FeeMode,
    bump: BumpConfig | None = None,
    opt: OptimizerConfig | None = None,
) -> list[GreeksRow]:
    live = (pos.l, pos.h)
    return [
        GreeksRow("Payoff", payoff_greeks(p, pos)),
        GreeksRow("European", fd_greeks(european_model(pos, market, mode), p, market.sigma, market.r, bump, live)),
        GreeksRow("American", fd_greeks(american_model(pos, market, mode, opt), p, market.sigma, market.r, bump, live)),
    ]


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.3f}"


@dataclass(frozen=True)
class GreeksTable:
    title: str
    rows: list[GreeksRow]

    def to_text(self) -> str:
        header = ["Model", "PV", "Delta", "Gamma", "Vega", "Rho"]
        cells = [[row.model] + [_fmt(v) for v in row.values()] for row in self.rows]
        widths = [max(len(r[i]) for r in [header] + cells) for i in range(len(header))]
        lines = [self.title] if self.title else []
        for r in [header] + cells:
            lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))))
        return "\n".join(lines)


def greeks_table(
    markets: Sequence[tuple[str, MarketParams]],
    pos: NormalizedPosition,
    p: float,
    mode: FeeMode = FeeMode.AT_CLOSE,
    bump: BumpConfig | None = None,
    opt: OptimizerConfig | None = None,
) -> list[GreeksTable]:
    """One Payoff / European / American table per named market."""
    tables = []
    for name, market in markets:
        title = f"{name}: C={market.fee_annual:g} r={market.r:g} sigma={market.sigma:g}"
        tables.append(GreeksTable(title, greeks_rows(pos, market, p, mode, bump, opt)))
    return tables


def write_greeks_csv(tables: Sequence[GreeksTable], dest: str | Path | io.TextIOBase) -> None:
    """CSV with columns model,pv,delta,gamma,vega,rho; several tables prefix the model name."""
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GREEKS_COLUMNS)
        for table in tables:
            prefix = f"{table.title.split(':')[0]}/" if len(tables) > 1 else ""
            for row in table.rows:
                writer.writerow([prefix + row.model] + [repr(v) if not math.isnan(v) else "nan" for v in row.values()])
    finally:
        if own:
            fh.close()
