"""Command-line interface: ``rnp price|greeks|mc|sweep|iv|ingest``.

Exit codes: 0 success, 2 validation or configuration error, 3 no implied
volatility root, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .greeks import BumpConfig, american_model, european_model, fd_greeks, greeks_table, write_greeks_csv
from .iv import IngestError, NoRootError, SolverConfig, break_even_iv, read_positions, weighted_iv_series, write_iv_series
from .laplace import FeeMode
from .model import DomainError, GreeksReport, MarketParams, NormalizedPosition, payoff_greeks
from .montecarlo import McConfig, mc_price
from .pricer import (
    American,
    European,
    OptimizerConfig,
    OptimizerError,
    PricingResult,
    price_american,
    price_european,
)

EXIT_OK, EXIT_USAGE, EXIT_NO_ROOT, EXIT_NUMERICAL = 0, 2, 3, 4
SWEEP_COLUMNS = ["param_value", "model", "fee_mode", "pv", "delta", "gamma", "vega", "rho"]
STYLES = {"euro": European, "amer": American}
FEE_MODES = {"continuous": FeeMode.CONTINUOUS, "at-close": FeeMode.AT_CLOSE}

# defaults applied after merging flags over the config file
DEFAULTS: dict[str, Any] = {
    "mu": 0.0,
    "s0": 1.0,
    "style": "euro",
    "fee_mode": "at-close",
    "paths": 100_000,
    "dt": 1e-4,
    "t_max": 100.0,
    "workers": 1,
    "target_pv": 1.0,
    "bracket_lo": 1e-3,
    "bracket_hi": 10.0,
    "bucket": "daily",
    "models": "payoff,euro,amer",
    "fee_modes": "continuous,at-close",
    "grid_n": 64,
}


# config keys whose flag name differs from the argparse destination
ALIASES = {"from": "start", "to": "stop"}
FLAG_NAMES = {v: k for k, v in ALIASES.items()}


class UsageError(Exception):
    pass


def _market_flags(p: argparse.ArgumentParser, with_sigma: bool = True) -> None:
    g = p.add_argument_group("market and position")
    g.add_argument("--spot", type=float, help="current spot price (quote units)")
    g.add_argument("--lower", type=float, help="lower range bound (quote units)")
    g.add_argument("--upper", type=float, help="upper range bound (quote units)")
    if with_sigma:
        g.add_argument("--sigma", type=float, help="annualized volatility")
    g.add_argument("--r", type=float, help="risk-free rate per year")
    g.add_argument("--fee-apr", dest="fee_apr", type=float, help="annual fee rate C_a")
    g.add_argument("--mu", type=float, help="drift per year (default 0)")
    g.add_argument("--s0", type=float, help="inception price used for normalization (default 1)")
    g.add_argument("--style", choices=sorted(STYLES), help="exercise style (default euro)")
    g.add_argument("--fee-mode", dest="fee_mode", choices=sorted(FEE_MODES), help="fee withdrawal (default at-close)")
    g.add_argument("--grid-n", dest="grid_n", type=int, help="American optimizer grid per axis (default 64)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rnp", description="Perpetual-barrier pricing of concentrated-liquidity LP positions.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with flag values; command-line flags win")
    common.add_argument("--json", action="store_true", help="emit JSON instead of text")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help, parents=[common])

    p = add("price", "present value of a position")
    _market_flags(p)

    p = add("greeks", "Payoff / European / American Greeks table")
    _market_flags(p)
    p.add_argument("--csv", type=Path, default=Path("greeks.csv"), help="CSV output path (default greeks.csv)")

    p = add("mc", "Monte Carlo check of the closed form")
    _market_flags(p)
    p.add_argument("--paths", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--seed", type=int, help="RNG seed (falls back to $RNP_SEED, then 0)")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-bridge", dest="no_bridge", action="store_true", help="disable the bridge crossing test")
    p.add_argument("--histogram", type=Path, help="write the payoff histogram CSV here")

    p = add("sweep", "grid of values and Greeks for plotting")
    _market_flags(p)
    p.add_argument("--param", choices=["spot", "sigma", "range-upper"])
    p.add_argument("--from", dest="start", type=float)
    p.add_argument("--to", dest="stop", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--models", help="comma list of payoff,euro,amer")
    p.add_argument("--fee-modes", dest="fee_modes", help="comma list of continuous,at-close")
    p.add_argument("--out", type=Path, help="CSV path (default stdout)")

    p = add("iv", "break-even implied volatility")
    _market_flags(p, with_sigma=False)
    p.add_argument("--target-pv", dest="target_pv", type=float)
    p.add_argument("--bracket-lo", dest="bracket_lo", type=float)
    p.add_argument("--bracket-hi", dest="bracket_hi", type=float)

    p = add("ingest", "weighted IV series from a positions CSV")
    p.add_argument("--positions", type=Path)
    p.add_argument("--bucket", choices=["daily", "hourly"])
    p.add_argument("--r", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--fee-mode", dest="fee_mode", choices=sorted(FEE_MODES))
    p.add_argument("--out", type=Path)
    return parser


def _config_keys() -> set[str]:
    """Destinations of every flag on every subcommand."""
    parser = build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {act.dest for p in sub.choices.values() for act in p._actions} - {"help", "config"}


def _merge(args: argparse.Namespace) -> dict[str, Any]:
    values: dict[str, Any] = dict(DEFAULTS)
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"--config: cannot read {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("--config: expected a JSON object")
        # one bundle can serve several subcommands; keys unused here are ignored
        known = _config_keys() | set(DEFAULTS)
        for key, value in loaded.items():
            name = ALIASES.get(key, key.replace("-", "_"))
            if name not in known:
                raise UsageError(f"--config: unknown key {key!r}")
            values[name] = value
    for key, value in vars(args).items():
        if value is not None and not (key == "no_bridge" and value is False):
            values[key] = value
    return values


def _need(values: dict[str, Any], *names: str) -> None:
    for name in names:
        if values.get(name) is None:
            raise UsageError(f"--{FLAG_NAMES.get(name, name).replace('_', '-')} is required")


def _flag_float(values: dict[str, Any], name: str) -> float:
    try:
        return float(values[name])
    except (TypeError, ValueError):
        raise UsageError(f"--{name.replace('_', '-')}: not a number: {values[name]!r}") from None


def _position(values: dict[str, Any]) -> tuple[NormalizedPosition, float, float]:
    """Normalized position, unit spot and s0, validated flag by flag."""
    _need(values, "spot", "lower", "upper")
    spot, lower, upper, s0 = (_flag_float(values, k) for k in ("spot", "lower", "upper", "s0"))
    if not s0 > 0:
        raise UsageError("--s0: must be > 0")
    if not spot > 0:
        raise UsageError("--spot: must be > 0")
    if not lower > 0:
        raise UsageError("--lower: must be > 0")
    if not lower < upper:
        raise UsageError("--lower: lower must be < upper")
    if not lower < s0:
        raise UsageError(f"--lower: lower must be < spot at inception (--s0 {s0:g})")
    if not s0 < upper:
        raise UsageError(f"--upper: upper must be > spot at inception (--s0 {s0:g})")
    return NormalizedPosition(lower / s0, upper / s0), spot / s0, s0


def _market(values: dict[str, Any], sigma: float | None = None) -> MarketParams:
    names = ["r", "fee_apr"] + (["sigma"] if sigma is None else [])
    _need(values, *names)
    sig = _flag_float(values, "sigma") if sigma is None else sigma
    r, fee, mu = (_flag_float(values, k) for k in ("r", "fee_apr", "mu"))
    if not sig > 0:
        raise UsageError("--sigma: must be > 0")
    if not r >= 0:
        raise UsageError("--r: must be >= 0")
    if not fee >= 0:
        raise UsageError("--fee-apr: must be >= 0")
    return MarketParams(mu, sig, r, fee)


def _choice(values: dict[str, Any], name: str, table: dict[str, Any]) -> Any:
    key = values.get(name)
    if key not in table:
        raise UsageError(f"--{name.replace('_', '-')}: expected one of {', '.join(sorted(table))}, got {key!r}")
    return table[key]


def _optimizer(values: dict[str, Any]) -> OptimizerConfig:
    try:
        return OptimizerConfig(grid_n=int(values["grid_n"]))
    except DomainError as exc:
        raise UsageError(f"--grid-n: {exc}") from None


def _num(v: float) -> str:
    return repr(float(v))


def _emit(values: dict[str, Any], payload: dict[str, Any]) -> None:
    if values.get("json"):
        print(json.dumps(payload, sort_keys=False))
        return
    width = max(len(k) for k in payload)
    for key, value in payload.items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = f"{value:.10g}"
        elif value is None:
            text = "-"
        else:
            text = str(value)
        print(f"{key.ljust(width)}  {text}")


def _price(pos, market, p, style_key, mode, opt) -> PricingResult:
    if style_key == "amer":
        return price_american(pos, market, p, mode, opt)
    return price_european(pos, market, p, mode)


def _pricing_payload(res: PricingResult, s0: float, style_key: str) -> dict[str, Any]:
    out: dict[str, Any] = {
        "pv": res.pv,
        "lp_leg": res.lp_leg,
        "fee_leg": res.fee_leg,
        "stopped": res.stopped,
        "style": style_key,
        "fee_mode": res.fee_mode.value,
    }
    if style_key == "amer":
        bounds = res.boundaries
        out["l1"] = bounds[0] * s0 if bounds else None
        out["l2"] = bounds[1] * s0 if bounds else None
        out["exercise_now"] = res.exercise_now
    return out


def cmd_price(values: dict[str, Any]) -> int:
    pos, p, s0 = _position(values)
    market = _market(values)
    style_key = values["style"]
    _choice(values, "style", STYLES)
    mode = _choice(values, "fee_mode", FEE_MODES)
    res = _price(pos, market, p, style_key, mode, _optimizer(values))
    _emit(values, _pricing_payload(res, s0, style_key))
    return EXIT_OK


def cmd_greeks(values: dict[str, Any]) -> int:
    pos, p, _ = _position(values)
    market = _market(values)
    mode = _choice(values, "fee_mode", FEE_MODES)
    tables = greeks_table([("market", market)], pos, p, mode, opt=_optimizer(values))
    out = Path(values["csv"])
    write_greeks_csv(tables, out)
    if values.get("json"):
        rows = {row.model: dict(zip(["pv", "delta", "gamma", "vega", "rho"], map(_json_float, row.values())))
                for row in tables[0].rows}
        print(json.dumps(rows))
    else:
        print(tables[0].to_text())
    return EXIT_OK


def _json_float(v: float) -> float | None:
    return None if math.isnan(v) else v


def _seed(values: dict[str, Any]) -> int:
    seed = values.get("seed")
    if seed is None:
        env = os.environ.get("RNP_SEED")
        if env is None:
            return 0
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"RNP_SEED: not an integer: {env!r}") from None
    return int(seed)


def cmd_mc(values: dict[str, Any]) -> int:
    pos, p, s0 = _position(values)
    market = _market(values)
    style_key = values["style"]
    _choice(values, "style", STYLES)
    mode = _choice(values, "fee_mode", FEE_MODES)
    try:
        cfg = McConfig(
            paths=int(values["paths"]), dt=float(values["dt"]), t_max=float(values["t_max"]),
            seed=_seed(values), bridge_correction=not values.get("no_bridge", False),
            workers=int(values["workers"]),
        )
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    closed = _price(pos, market, p, style_key, mode, _optimizer(values))
    if closed.stopped or closed.exercise_now:
        raise UsageError("--spot: outside the live region, nothing to simulate")
    style = closed.style if style_key == "amer" else European()
    est = mc_price(pos, market, p, style, mode, cfg)
    if values.get("histogram") is not None:
        est.exit_histogram.to_csv(values["histogram"])
    gap = est.mean - closed.pv
    payload = {
        "mean": est.mean,
        "std_error": est.std_error,
        "n_paths": est.n_paths,
        "closed_form": closed.pv,
        "gap": gap,
        "gap_in_std_errors": gap / est.std_error if est.std_error > 0 else None,
        "upper_exit_fraction": est.upper_exit_fraction,
        "lower_exit_fraction": est.lower_exit_fraction,
        "truncated_fraction": est.truncated_fraction,
        "seed": cfg.seed,
    }
    if style_key == "amer":
        payload["l1"], payload["l2"] = (b * s0 for b in closed.boundaries)
    _emit(values, payload)
    return EXIT_OK


def _stopped_greeks(p: float, pos: NormalizedPosition) -> GreeksReport:
    g = payoff_greeks(p, pos)
    return GreeksReport(g.pv, g.delta, g.gamma, 0.0, 0.0, frozenset({"stopped"}))


def _sweep_row(model: str, pos, market, p, mode, opt) -> GreeksReport:
    if model == "payoff":
        return payoff_greeks(p, pos)
    if not pos.l < p < pos.h:
        return _stopped_greeks(p, pos)
    fn = european_model(pos, market, mode) if model == "euro" else american_model(pos, market, mode, opt)
    return fd_greeks(fn, p, market.sigma, market.r, BumpConfig(), (pos.l, pos.h))


def cmd_sweep(values: dict[str, Any]) -> int:
    _need(values, "param", "start", "stop", "steps")
    if values["param"] not in ("spot", "sigma", "range-upper"):
        raise UsageError(f"--param: expected spot, sigma or range-upper, got {values['param']!r}")
    steps = int(values["steps"])
    if steps < 1:
        raise UsageError("--steps: must be >= 1")
    start, stop = float(values["start"]), float(values["stop"])
    if not (math.isfinite(start) and math.isfinite(stop)):
        raise UsageError("--from/--to: must be finite")
    if steps > 1 and not start < stop:
        raise UsageError("--from: must be < --to")
    models = [m.strip() for m in str(values["models"]).split(",") if m.strip()]
    for m in models:
        if m not in ("payoff", "euro", "amer"):
            raise UsageError(f"--models: unknown model {m!r}")
    modes = [m.strip() for m in str(values["fee_modes"]).split(",") if m.strip()]
    for m in modes:
        if m not in FEE_MODES:
            raise UsageError(f"--fee-modes: unknown fee mode {m!r}")
    param = values["param"]
    grid = np.linspace(start, stop, steps) if steps > 1 else np.array([start])

    key = {"spot": "spot", "sigma": "sigma", "range-upper": "upper"}[param]
    if key == "sigma" and not grid.min() > 0:
        raise UsageError("--from: sigma grid must be > 0")
    opt = _optimizer(values)
    rows = []
    for x in grid:
        point = dict(values)
        point[key] = float(x)
        pos, p, _ = _position(point)
        market = _market(point)
        for model in models:
            for mode_key in (["none"] if model == "payoff" else modes):
                mode = FEE_MODES.get(mode_key, FeeMode.AT_CLOSE)
                g = _sweep_row(model, pos, market, p, mode, opt)
                rows.append([_num(x), model, mode_key] + [_num(v) if not math.isnan(v) else "nan"
                                                        for v in (g.pv, g.delta, g.gamma, g.vega, g.rho)])
    out = values.get("out")
    fh = open(out, "w", newline="", encoding="utf-8") if out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(rows)
    finally:
        if out:
            fh.close()
    return EXIT_OK


def cmd_iv(values: dict[str, Any]) -> int:
    pos, p, _ = _position(values)
    _need(values, "r", "fee_apr")
    market = _market(values, sigma=1.0)
    style_key = values["style"]
    style = _choice(values, "style", STYLES)()
    mode = _choice(values, "fee_mode", FEE_MODES)
    lo, hi = _flag_float(values, "bracket_lo"), _flag_float(values, "bracket_hi")
    if not 0 < lo < hi:
        raise UsageError("--bracket-lo: need 0 < bracket-lo < bracket-hi")
    res = break_even_iv(
        pos, market.mu, market.r, market.fee_annual, p, style, mode, (lo, hi),
        _flag_float(values, "target_pv"), _optimizer(values),
    )
    _emit(values, {"sigma": res.sigma, "pv": res.pv, "multiple_roots": res.multiple_roots,
                   "sign_changes": res.sign_changes, "style": style_key})
    return EXIT_OK


def cmd_ingest(values: dict[str, Any]) -> int:
    _need(values, "positions", "r", "out")
    try:
        result = read_positions(values["positions"])
    except OSError as exc:
        raise UsageError(f"--positions: {exc}") from None
    except IngestError as exc:
        raise UsageError(f"--positions: {exc}") from None
    for line, message in result.rejected:
        print(f"{values['positions']}:{line}: rejected: {message}", file=sys.stderr)
    r = _flag_float(values, "r")
    if not r >= 0:
        raise UsageError("--r: must be >= 0")
    solver = SolverConfig(r=r, mu=_flag_float(values, "mu"), mode=_choice(values, "fee_mode", FEE_MODES))
    points = weighted_iv_series(result.records, values["bucket"], solver)
    try:
        write_iv_series(points, values["out"])
    except OSError as exc:
        raise UsageError(f"--out: {exc}") from None
    _emit(values, {"records": len(result.records), "rejected": len(result.rejected),
                   "buckets": len(points), "out": str(values["out"])})
    return EXIT_OK


COMMANDS = {
    "price": cmd_price,
    "greeks": cmd_greeks,
    "mc": cmd_mc,
    "sweep": cmd_sweep,
    "iv": cmd_iv,
    "ingest": cmd_ingest,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        values = _merge(args)
        return COMMANDS[args.command](values)
    except UsageError as exc:
        print(f"rnp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"rnp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoRootError as exc:
        print(f"rnp {args.command}: {exc}", file=sys.stderr)
        return EXIT_NO_ROOT
    except (OptimizerError, ArithmeticError) as exc:
        print(f"rnp {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
