"""Monte Carlo first-passage oracle for the closed-form pricers.

Paths follow GBM in log space with Euler steps (exact for GBM).  Between grid
points a Brownian-bridge crossing test catches exits the discrete path misses.
Random numbers come from Philox4x32-10 keyed by the seed, with the path index
in the counter, so each path's outcome is independent of batching and of the
number of worker threads.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .laplace import FeeMode
from .model import DomainError, MarketParams, NormalizedPosition, lp_payoff_v3
from .philox import step_draws
from .pricer import American, European, ExerciseStyle, price

UPPER, LOWER, TRUNCATED = 1, -1, 0
_BATCH_PATHS = 8192


class McConfigError(DomainError):
    pass


@dataclass(frozen=True)
class McConfig:
    paths: int = 100_000
    dt: float = 1e-4
    t_max: float = 100.0
    seed: int = 0
    bridge_correction: bool = True
    workers: int = 1
    chunk_steps: int = 64
    bins: int = 50

    def __post_init__(self) -> None:
        if self.paths < 1:
            raise McConfigError(f"paths must be >= 1, got {self.paths}")
        if not 0 < self.dt <= 1e-2:
            raise McConfigError(f"dt must be in (0, 1e-2], got {self.dt}")
        if not self.t_max >= 1:
            raise McConfigError(f"t_max must be >= 1, got {self.t_max}")
        if self.workers < 1:
            raise McConfigError(f"workers must be >= 1, got {self.workers}")
        if self.chunk_steps < 2 or self.chunk_steps % 2:
            raise McConfigError(f"chunk_steps must be an even number >= 2, got {self.chunk_steps}")


@dataclass(frozen=True)
class PathSample:
    """Per-path exit time, exit side and unit price at exit (or at the horizon)."""

    tau: np.ndarray
    side: np.ndarray
    final_price: np.ndarray


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_left", "bin_right", "count"])
            for left, right, count in zip(self.edges[:-1], self.edges[1:], self.counts):
                writer.writerow([repr(float(left)), repr(float(right)), int(count)])

    def occupied_runs(self) -> list[tuple[int, int]]:
        """Maximal runs ``[start, stop)`` of consecutive non-empty bins."""
        runs, start = [], None
        for i, c in enumerate(self.counts):
            if c and start is None:
                start = i
            elif not c and start is not None:
                runs.append((start, i))
                start = None
        if start is not None:
            runs.append((start, len(self.counts)))
        return runs


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    exit_histogram: Histogram
    upper_exit_fraction: float
    lower_exit_fraction: float
    truncated_fraction: float
    lp_mean: float
    fee_mean: float
    upper_support: tuple[float, float] | None
    lower_support: tuple[float, float] | None

    @property
    def clusters_disjoint(self) -> bool:
        """True when upper- and lower-exit payoffs occupy non-overlapping intervals
        and the histogram is empty strictly between them."""
        if self.upper_support is None or self.lower_support is None:
            return False
        lo_sup, up_sup = sorted([self.lower_support, self.upper_support])
        if lo_sup[1] >= up_sup[0]:
            return False
        edges, counts = self.exit_histogram.edges, self.exit_histogram.counts
        between = (edges[:-1] >= lo_sup[1]) & (edges[1:] <= up_sup[0])
        return not counts[between].any()


def _bridge_probability(d0: np.ndarray, d1: np.ndarray, var_dt: float, inside: np.ndarray) -> np.ndarray:
    """P(bridge touches a barrier | endpoints at distances d0, d1 from it)."""
    arg = (-2.0 / var_dt) * d0 * d1
    # e^{-50} is far below the 2^-33 resolution of the uniforms
    near = inside & (arg > -50.0)
    return np.exp(arg, where=near, out=np.zeros_like(arg))


def _simulate_batch(
    path_ids: np.ndarray,
    log_p0: float,
    log_lo: float,
    log_hi: float,
    drift: float,
    vol: float,
    cfg: McConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = path_ids.shape[0]
    dt = cfg.dt
    max_steps = int(math.ceil(cfg.t_max / dt - 1e-9))
    tau = np.full(n, cfg.t_max)
    side = np.zeros(n, dtype=np.int8)
    x = np.full(n, log_p0)
    active = np.arange(n)
    sd = vol * math.sqrt(dt)
    var_dt = vol * vol * dt
    step = 0
    while active.size and step < max_steps:
        k = min(cfg.chunk_steps, max_steps - step)
        normals, uniforms = step_draws(cfg.seed, path_ids[active], step // 2, (k + 1) // 2)
        normals, uniforms = normals[:, :k], uniforms[:, :k]
        # cumulative sum seeded with the current level: sequential adds, so the
        # result does not depend on chunking
        levels = np.cumsum(
            np.concatenate([x[active, None], drift * dt + sd * normals], axis=1), axis=1
        )
        prev, cur = levels[:, :-1], levels[:, 1:]
        up_cross = cur >= log_hi
        lo_cross = cur <= log_lo
        hit = up_cross | lo_cross
        bridge_up = bridge_lo = None
        if cfg.bridge_correction and var_dt > 0:
            inside = ~hit
            p_up = _bridge_probability(log_hi - prev, log_hi - cur, var_dt, inside)
            p_lo = _bridge_probability(prev - log_lo, cur - log_lo, var_dt, inside)
            bridge_up = inside & (uniforms < p_up)
            bridge_lo = inside & ~bridge_up & (uniforms < p_up + p_lo)
            hit = hit | bridge_up | bridge_lo
        any_hit = hit.any(axis=1)
        first = np.argmax(hit, axis=1)
        rows = np.nonzero(any_hit)[0]
        if rows.size:
            j = first[rows]
            p0, p1 = prev[rows, j], cur[rows, j]
            is_up = up_cross[rows, j]
            is_lo = lo_cross[rows, j]
            frac = np.full(rows.size, 0.5)
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(is_up, (log_hi - p0) / (p1 - p0), frac)
                frac = np.where(is_lo, (log_lo - p0) / (p1 - p0), frac)
            frac = np.clip(np.nan_to_num(frac, nan=0.5), 0.0, 1.0)
            s = np.where(is_up, UPPER, np.where(is_lo, LOWER, 0))
            if bridge_up is not None:
                s = np.where(s == 0, np.where(bridge_up[rows, j], UPPER, LOWER), s)
            idx = active[rows]
            side[idx] = s
            tau[idx] = (step + j + frac) * dt
        still = ~any_hit
        x[active[still]] = levels[still, k]
        active = active[still]
        step += k
    final = np.where(side == UPPER, log_hi, np.where(side == LOWER, log_lo, x))
    return tau, side, np.exp(final)


def simulate_exits(
    p: float, lower: float, upper: float, market: MarketParams, cfg: McConfig
) -> PathSample:
    """Simulate ``cfg.paths`` GBM paths from unit price ``p`` until they leave (lower, upper)."""
    if not 0 < lower < p < upper:
        raise DomainError(f"need 0 < lower < p < upper, got {lower}, {p}, {upper}")
    drift = market.mu - 0.5 * market.sigma**2
    args = (math.log(p), math.log(lower), math.log(upper), drift, market.sigma, cfg)
    batches = [
        np.arange(start, min(start + _BATCH_PATHS, cfg.paths), dtype=np.uint64)
        for start in range(0, cfg.paths, _BATCH_PATHS)
    ]
    if cfg.workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(lambda ids: _simulate_batch(ids, *args), batches))
    else:
        parts = [_simulate_batch(ids, *args) for ids in batches]
    tau, side, final = (np.concatenate(col) for col in zip(*parts))
    return PathSample(tau, side, final)


def discounted_fee(tau: np.ndarray, r: float, mode: FeeMode) -> np.ndarray:
    """Per-path discounted fee accrual per unit fee rate."""
    if mode is FeeMode.AT_CLOSE:
        return tau * np.exp(-r * tau)
    if r == 0:
        return tau.copy()
    # integral of e^{-rt} over [0, tau], exact for a constant accrual rate
    return -np.expm1(-r * tau) / r


def estimate(
    sample: PathSample,
    payoff_lower: float,
    payoff_upper: float,
    payoff_fn,
    market: MarketParams,
    fee_scale: float,
    mode: FeeMode,
    bins: int = 50,
) -> McEstimate:
    """Turn simulated exits into a discounted-payoff estimate."""
    tau, side = sample.tau, sample.side
    disc = np.exp(-market.r * tau)
    boundary_value = np.where(side == UPPER, payoff_upper, payoff_lower)
    truncated = side == TRUNCATED
    if truncated.any():
        boundary_value = boundary_value.astype(float)
        boundary_value[truncated] = [payoff_fn(q) for q in sample.final_price[truncated]]
    lp = boundary_value * disc
    fee = market.fee_annual * fee_scale * discounted_fee(tau, market.r, mode)
    total = lp + fee
    n = total.size
    std_error = float(total.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    lo_v, hi_v = float(total.min()), float(total.max())
    if hi_v <= lo_v:
        pad = max(abs(lo_v), 1.0) * 1e-12
        lo_v, hi_v = lo_v - pad, hi_v + pad
    counts, edges = np.histogram(total, bins=bins, range=(lo_v, hi_v))

    def support(mask: np.ndarray) -> tuple[float, float] | None:
        if not mask.any():
            return None
        return float(total[mask].min()), float(total[mask].max())

    return McEstimate(
        mean=float(total.mean()),
        std_error=std_error,
        n_paths=n,
        exit_histogram=Histogram(edges, counts),
        upper_exit_fraction=float(np.count_nonzero(side == UPPER) / n),
        lower_exit_fraction=float(np.count_nonzero(side == LOWER) / n),
        truncated_fraction=float(np.count_nonzero(truncated) / n),
        lp_mean=float(lp.mean()),
        fee_mean=float(fee.mean()),
        upper_support=support(side == UPPER),
        lower_support=support(side == LOWER),
    )


def _exit_levels(pos: NormalizedPosition, style: ExerciseStyle) -> tuple[float, float]:
    if isinstance(style, European):
        return pos.l, pos.h
    if isinstance(style, American) and style.has_boundaries:
        return style.l1, style.l2
    raise DomainError("Monte Carlo needs explicit exit levels for an American style")


def mc_price(
    pos: NormalizedPosition,
    market: MarketParams,
    p: float,
    style: ExerciseStyle,
    mode: FeeMode,
    cfg: McConfig,
) -> McEstimate:
    lower, upper = _exit_levels(pos, style)
    if not lower < p < upper:
        raise DomainError(f"spot {p} is outside the live region ({lower}, {upper})")
    sample = simulate_exits(p, lower, upper, market, cfg)
    return estimate(
        sample,
        lp_payoff_v3(lower, pos),
        lp_payoff_v3(upper, pos),
        lambda q: lp_payoff_v3(q, pos),
        market,
        pos.lq,
        mode,
        cfg.bins,
    )


@dataclass(frozen=True)
class ConvergenceRow:
    paths: int
    mean: float
    std_error: float
    gap: float | None


def convergence_report(
    pos: NormalizedPosition,
    market: MarketParams,
    p: float,
    style: ExerciseStyle,
    mode: FeeMode,
    cfg: McConfig,
    ladder: list[int],
) -> list[ConvergenceRow]:
    """MC mean and standard error along an increasing ladder of path counts.

    Every rung reuses the seed, so a rung's paths extend the previous rung's.
    """
    if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise McConfigError("ladder must be nonempty and strictly increasing")
    closed = price(pos, market, p, style, mode).pv
    rows = []
    for n in ladder:
        est = mc_price(pos, market, p, style, mode, dataclasses.replace(cfg, paths=n))
        rows.append(ConvergenceRow(n, est.mean, est.std_error, abs(est.mean - closed)))
    return rows
