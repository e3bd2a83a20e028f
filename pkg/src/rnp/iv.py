"""Implied volatility from the pricing model, the LVR benchmark and dataset analytics."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .laplace import FeeMode
from .model import DomainError, MarketParams, NormalizedPosition
from .pricer import European, ExerciseStyle, OptimizerConfig, price

log = logging.getLogger(__name__)

POSITION_COLUMNS = ["timestamp", "pool_id", "lower_price", "upper_price", "spot_price", "fee_apr", "weight"]
IV_SERIES_COLUMNS = ["bucket_start", "n_positions", "weighted_iv", "lvr_iv", "mean_fee_apr"]
SCAN_POINTS = 64


class NoRootError(ValueError):
    """The pricing function does not cross the target on the bracket."""

    def __init__(self, bracket: tuple[float, float], values: tuple[float, float], target: float):
        super().__init__(
            f"no root on sigma bracket [{bracket[0]:g}, {bracket[1]:g}]: "
            f"V={values[0]!r} at low end, V={values[1]!r} at high end, target {target!r}"
        )
        self.bracket = bracket
        self.values = values
        self.target = target


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class IvResult:
    sigma: float
    pv: float
    multiple_roots: bool
    sign_changes: int


def break_even_iv(
    pos: NormalizedPosition,
    mu: float,
    r: float,
    fee_annual: float,
    p: float = 1.0,
    style: ExerciseStyle = European(),
    mode: FeeMode = FeeMode.AT_CLOSE,
    bracket: tuple[float, float] = (1e-3, 10.0),
    target_pv: float = 1.0,
    opt: OptimizerConfig | None = None,
    xtol: float = 1e-10,
) -> IvResult:
    """Volatility at which the model value equals ``target_pv``.

    The bracket is scanned on a 64-point log grid first.  The smallest root is
    refined by bisection; ``multiple_roots`` reports further sign changes.
    """
    lo, hi = bracket
    if not 0 < lo < hi:
        raise DomainError(f"bracket must satisfy 0 < lo < hi, got {bracket}")

    def excess(sigma: float) -> float:
        return price(pos, MarketParams(mu, sigma, r, fee_annual), p, style, mode, opt).pv - target_pv

    grid = np.geomspace(lo, hi, SCAN_POINTS)
    values = [excess(float(s)) for s in grid]
    changes = [
        i for i in range(SCAN_POINTS - 1)
        if values[i] == 0 or (values[i] < 0) != (values[i + 1] < 0)
    ]
    if values[-1] == 0:
        changes.append(SCAN_POINTS - 1)
    if not changes:
        raise NoRootError(bracket, (values[0] + target_pv, values[-1] + target_pv), target_pv)
    i = changes[0]
    a, fa = float(grid[i]), values[i]
    if fa == 0:
        return IvResult(a, target_pv, len(changes) > 1, len(changes))
    b = float(grid[i + 1])
    while b - a > xtol:
        m = 0.5 * (a + b)
        fm = excess(m)
        if fm == 0:
            a = b = m
            break
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b = m
    sigma = 0.5 * (a + b)
    return IvResult(sigma, excess(sigma) + target_pv, len(changes) > 1, len(changes))


def lvr_iv(fee_rate: float) -> float:
    """Volatility at which instantaneous LVR equals the fee rate: sigma = 2 sqrt(C)."""
    if not fee_rate >= 0:
        raise DomainError(f"fee rate must be >= 0, got {fee_rate}")
    return 2.0 * math.sqrt(fee_rate)


@dataclass(frozen=True)
class PositionRecord:
    timestamp: datetime
    pool_id: str
    lower_price: float
    upper_price: float
    spot_price: float
    fee_apr: float
    weight: float

    def normalized(self) -> NormalizedPosition:
        return NormalizedPosition(self.lower_price / self.spot_price, self.upper_price / self.spot_price)


@dataclass
class IngestResult:
    records: list[PositionRecord]
    rejected: list[tuple[int, str]] = field(default_factory=list)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_row(row: dict[str, str]) -> PositionRecord:
    nums = {}
    for name in ("lower_price", "upper_price", "spot_price", "fee_apr", "weight"):
        raw = (row.get(name) or "").strip()
        try:
            nums[name] = float(raw)
        except ValueError:
            raise ValueError(f"{name} is not numeric: {raw!r}") from None
        if not math.isfinite(nums[name]):
            raise ValueError(f"{name} is not finite: {raw!r}")
    try:
        ts = parse_timestamp(row["timestamp"] or "")
    except ValueError:
        raise ValueError(f"timestamp is not ISO-8601: {row['timestamp']!r}") from None
    if not nums["lower_price"] > 0:
        raise ValueError("lower_price must be > 0")
    if not nums["lower_price"] < nums["spot_price"]:
        raise ValueError("lower_price must be < spot_price")
    if not nums["spot_price"] < nums["upper_price"]:
        raise ValueError("spot_price must be < upper_price")
    if not nums["fee_apr"] >= 0:
        raise ValueError("fee_apr must be >= 0")
    if not nums["weight"] > 0:
        raise ValueError("weight must be > 0")
    return PositionRecord(ts, (row.get("pool_id") or "").strip(), **nums)


def read_positions(path: str | Path) -> IngestResult:
    """Parse a positions CSV, keeping valid rows and line-numbered rejections."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in POSITION_COLUMNS if c not in header]
        if missing:
            raise IngestError(f"{path}: missing column(s): {', '.join(missing)}")
        result = IngestResult([])
        for row in reader:
            line = reader.line_num
            try:
                result.records.append(_parse_row(row))
            except ValueError as exc:
                result.rejected.append((line, str(exc)))
    if not result.records:
        raise IngestError(f"{path}: no valid rows")
    return result


def ingest_positions(path: str | Path) -> list[PositionRecord]:
    result = read_positions(path)
    for line, message in result.rejected:
        log.warning("%s:%d: rejected row: %s", path, line, message)
    return result.records


def write_positions(records: Iterable[PositionRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POSITION_COLUMNS)
        for rec in records:
            writer.writerow([
                format_timestamp(rec.timestamp), rec.pool_id, repr(rec.lower_price),
                repr(rec.upper_price), repr(rec.spot_price), repr(rec.fee_apr), repr(rec.weight),
            ])


@dataclass(frozen=True)
class IvPoint:
    bucket_start: datetime
    n_positions: int
    weighted_iv: float | None
    lvr_iv: float | None
    mean_fee_apr: float
    n_unsolved: int = 0


@dataclass(frozen=True)
class SolverConfig:
    r: float = 0.05
    mu: float = 0.0
    mode: FeeMode = FeeMode.AT_CLOSE
    target_pv: float = 1.0
    bracket: tuple[float, float] = (1e-3, 10.0)


def bucket_start(ts: datetime, bucket: str) -> datetime:
    ts = ts.astimezone(timezone.utc)
    if bucket == "daily":
        return ts.replace(hour=0, minute=0, second=0, microsecond=0)
    if bucket == "hourly":
        return ts.replace(minute=0, second=0, microsecond=0)
    raise DomainError(f"bucket must be 'daily' or 'hourly', got {bucket!r}")


def _weighted_mean(values: Sequence[float], weights: Sequence[float]) -> float:
    return math.fsum(v * w for v, w in zip(values, weights)) / math.fsum(weights)


def weighted_iv_series(
    records: Sequence[PositionRecord], bucket: str = "daily", solver: SolverConfig | None = None
) -> list[IvPoint]:
    """Weighted model IV and LVR IV per time bucket.

    The LVR column averages the per-record ``2 sqrt(fee_apr)`` values rather
    than taking ``2 sqrt`` of the average fee rate.
    """
    if not records:
        raise DomainError("no records")
    solver = solver or SolverConfig()
    groups: dict[datetime, list[PositionRecord]] = defaultdict(list)
    for rec in records:
        groups[bucket_start(rec.timestamp, bucket)].append(rec)
    points = []
    for start in sorted(groups):
        group = groups[start]
        sigmas, weights = [], []
        for rec in group:
            try:
                res = break_even_iv(
                    rec.normalized(), solver.mu, solver.r, rec.fee_apr, 1.0, European(),
                    solver.mode, solver.bracket, solver.target_pv,
                )
            except NoRootError:
                continue
            sigmas.append(res.sigma)
            weights.append(rec.weight)
        all_w = [rec.weight for rec in group]
        mean_fee = _weighted_mean([rec.fee_apr for rec in group], all_w)
        if not sigmas:
            points.append(IvPoint(start, 0, None, None, mean_fee, len(group)))
            continue
        lvr = _weighted_mean([lvr_iv(rec.fee_apr) for rec in group], all_w)
        points.append(
            IvPoint(start, len(sigmas), _weighted_mean(sigmas, weights), lvr, mean_fee, len(group) - len(sigmas))
        )
    return points


def write_iv_series(points: Iterable[IvPoint], path: str | Path) -> None:
    def cell(v: float | None) -> str:
        return "" if v is None else repr(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(IV_SERIES_COLUMNS)
        for pt in points:
            writer.writerow([
                format_timestamp(pt.bucket_start), pt.n_positions,
                cell(pt.weighted_iv), cell(pt.lvr_iv), repr(pt.mean_fee_apr),
            ])
