"""``tickwise`` command line.

Subcommands::

    waterfill CONDITIONS      max-revenue allocation for a conditions file
    optimize  DATA_DIR        estimate (a, b, c) from history, then solve
    sweep     CONDITIONS      allocations over a list of capital levels
    backtest  DATA_DIR        rolling train/test comparison of strategies
    estimate  DATA_DIR        estimators only: a, b, c and the consistency report
    synth     KIND            write a bundled synthetic dataset

Exit codes: 0 success, 2 schema/usage, 3 solver failure, 4 insufficient data.
Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .backtest import (
    SECONDS_PER_DAY,
    MarketData,
    estimate_conditions,
    rolling_backtest,
    strategy_tick_by_tick,
)
from .config import STRATEGIES, RunConfig
from .core import (
    ConvergenceError,
    DegenerateObjectiveError,
    InfeasibleAllocationError,
    InsufficientDataError,
    MarketConditions,
    ValidationError,
    find_tick,
)
from .maxreturn import SweepError, capital_sweep
from .reserves import reserve_value_curve
from .volume import AttributionError
from .waterfill import solve_waterfill

log = logging.getLogger("tickwise")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_DATA = 0, 2, 3, 4


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, field="argv")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (InsufficientDataError, AttributionError)):
        return EXIT_DATA
    if isinstance(exc, SweepError):
        return exit_code_for(exc.cause)
    if isinstance(exc, (ConvergenceError, DegenerateObjectiveError, InfeasibleAllocationError)):
        return EXIT_SOLVER
    return EXIT_USAGE


def error_payload(exc: BaseException) -> dict:
    out = {"error": type(exc).__name__, "message": str(exc), "exit_code": exit_code_for(exc)}
    for attr in ("field", "path", "line"):
        value = getattr(exc, attr, None)
        if value is not None:
            out[attr] = value
    if isinstance(exc, SweepError):
        out["index"] = exc.index
        out["d"] = exc.d
    return out


# -- configuration ---------------------------------------------------------

def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.override(
        d=args.d, sigma=args.sigma, horizon_days=args.horizon_days, train_days=args.train_days,
        stride_days=args.stride_days, range_pct=args.range_pct, seed=args.seed,
    )


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON file with run configuration fields")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=float, help="capital to provision")
    p.add_argument("--sigma", type=float, help="annualized volatility of the price model")
    p.add_argument("--horizon-days", type=float, dest="horizon_days")
    p.add_argument("--train-days", type=float, dest="train_days")
    p.add_argument("--stride-days", type=float, dest="stride_days")
    p.add_argument("--range-pct", type=float, dest="range_pct")


def _d_list(text: str) -> list[float]:
    items = [s for s in text.replace(" ", "").split(",") if s]
    if not items:
        raise UsageError("--d-list is empty", field="d_list")
    try:
        return [float(s) for s in items]
    except ValueError:
        raise UsageError(f"--d-list must be comma-separated numbers, got {text!r}", field="d_list") from None


# -- commands --------------------------------------------------------------

def cmd_waterfill(args) -> dict:
    mc = io.read_conditions(args.conditions, require_c=False)
    d = mc.d if args.d is None else args.d
    alloc = solve_waterfill(mc.a, mc.b, d)
    ids = [t.id for t in mc.ticks]
    jpath, cpath = io.write_allocation(args.out, alloc, ids, d)
    return {"allocation": str(jpath), "csv": str(cpath), "status": alloc.status}


def _open_state(data: MarketData, config: RunConfig):
    """Latest snapshot, open price and training swaps ending at the data's end."""
    snapshot = data.snapshots[-1]
    p0 = snapshot.price if snapshot.price is not None else data.price_at(data.end)
    train = data.events_between(data.end - config.train_days * SECONDS_PER_DAY, data.end + 1e-9)
    if not train:
        raise InsufficientDataError(f"no swaps in the {config.train_days:g} days before the open")
    return snapshot, p0, train


def audit_bundle(fit, ticks, config: RunConfig) -> dict:
    alloc = fit.allocation
    return {
        "schema_version": io.SCHEMA_VERSION,
        "kind": "audit",
        "config": config.to_dict(),
        "p0": float(fit.p0),
        "d": float(fit.d),
        "tick_ids": [t.id for t in ticks],
        "a": io._floats(fit.a),
        "b": io._floats(fit.b),
        "c": io._floats(fit.c),
        "x": io._floats(alloc.x),
        "dual": float(alloc.dual),
        "kkt_residual": float(alloc.kkt_residual),
        "objective": float(alloc.objective),
        "status": alloc.status,
        "sigma_volume": float(fit.sigma_volume),
        "total_volume": float(fit.total_volume),
        "consistency": fit.consistency.to_dict(),
    }


def cmd_optimize(args) -> dict:
    config = load_config(args)
    data = io.read_market(args.data)
    snapshot, p0, train = _open_state(data, config)
    fit = strategy_tick_by_tick(train, snapshot, config, p0=p0)
    ids = [t.id for t in snapshot.ticks]
    out = Path(args.out)
    jpath, cpath = io.write_allocation(out, fit.allocation, ids, fit.d)
    io.write_json(out / "audit.json", audit_bundle(fit, snapshot.ticks, config))
    io.write_conditions(out / "conditions.json",
                        MarketConditions(snapshot.ticks, fit.a, fit.b, fit.c, fit.d, p0))
    return {"allocation": str(jpath), "audit": str(out / "audit.json"),
            "flags": list(fit.consistency.flags)}


def support_monotone(allocations) -> bool:
    supports = [a.support for a in allocations]
    return all(s <= t for s, t in zip(supports, supports[1:]))


def cmd_sweep(args) -> dict:
    d_list = _d_list(args.d_list)
    mc = io.read_conditions(args.conditions)
    allocs = capital_sweep(mc.a, mc.b, mc.c, d_list)
    ids = [t.id for t in mc.ticks]
    out = Path(args.out)
    io.write_sweep(out / "sweep.csv", d_list, allocs, ids, mc.b)
    meta = {
        "schema_version": io.SCHEMA_VERSION,
        "kind": "sweep",
        "d_list": [float(d) for d in d_list],
        "support_monotone": support_monotone(allocs),
        "support_size": [len(a.support) for a in allocs],
        "dual": [float(a.dual) for a in allocs],
        "kkt_residual": [float(a.kkt_residual) for a in allocs],
        "status": [a.status for a in allocs],
    }
    io.write_json(out / "sweep.json", meta)
    return {"sweep": str(out / "sweep.csv"), "support_monotone": meta["support_monotone"]}


def cmd_backtest(args) -> dict:
    config = load_config(args)
    if args.strategies:
        config = config.override(strategies=tuple(s for s in args.strategies.split(",") if s))
    if args.workers:
        config = config.override(workers=args.workers)
    data = io.read_market(args.data)
    result = rolling_backtest(data, config)
    out = Path(args.out)
    io.write_table(out / "table.csv", result.table)
    io.write_window_audit(out / "windows.csv", result.windows)
    ids = [t.id for t in data.ticks]
    meta = {
        "schema_version": io.SCHEMA_VERSION,
        "kind": "backtest",
        "config": config.to_dict(),
        "strategies": list(result.table.strategies),
        "n_windows": len(result.windows),
        "mean": list(result.table.mean),
        "std": list(result.table.std),
        "tick_ids": ids,
        "windows": [
            {
                "train_block": wr.window.train_label,
                "test_block": wr.window.test_label,
                "snapshot_updates_ignored": wr.snapshot_updates,
                "consistency": None if wr.fit is None else wr.fit.consistency.to_dict(),
                "allocations": {k: io._floats(v) for k, v in wr.allocations.items()},
            }
            for wr in result.windows
        ],
    }
    io.write_json(out / "backtest.json", io.jsonable(meta))
    return {"table": str(out / "table.csv"), "windows": len(result.windows)}


def reserve_curve_rows(ticks, p0: float, points: int = 257):
    """``price, tick_id, r`` for the open tick and the outermost candidates."""
    k = find_tick(ticks, p0)
    picks = sorted({0, len(ticks) - 1} | ({k} if k is not None else set()))
    lo = min(t.price_lo for t in ticks)
    hi = max(t.price_hi for t in ticks)
    grid = np.linspace(lo * 0.95, hi * 1.05, points)
    for i in picks:
        r = reserve_value_curve(ticks[i], p0).value_at(grid)
        for p, v in zip(grid, r):
            yield io.fmt(p), ticks[i].id, io.fmt(v)


def cmd_estimate(args) -> dict:
    config = load_config(args)
    data = io.read_market(args.data)
    snapshot, p0, train = _open_state(data, config)
    a, b, c, mass, sigma_volume, total, report = estimate_conditions(train, snapshot, config, p0=p0)
    out = Path(args.out)
    io.write_conditions(out / "conditions.json", MarketConditions(snapshot.ticks, a, b, c, config.d, p0))
    io.write_estimates(out / "estimates.csv", snapshot.ticks, a, b, c)
    io.write_csv(out / "reserve_curves.csv", ("price", "tick_id", "r"),
                 reserve_curve_rows(snapshot.ticks, p0))
    io.write_json(out / "consistency.json", {
        "schema_version": io.SCHEMA_VERSION, "kind": "consistency", "p0": float(p0),
        "sigma_volume": float(sigma_volume), "total_volume": float(total),
        **report.to_dict(),
    })
    return {"conditions": str(out / "conditions.json"), "flags": list(report.flags)}


def cmd_synth(args) -> dict:
    from . import synthetic

    seed = 0 if args.seed is None else args.seed
    out = Path(args.out)
    if args.kind == "sweep":
        io.write_conditions(out / "conditions.json", synthetic.sweep_scenario(1.0 if args.d is None else args.d))
    elif args.kind == "well":
        io.write_market(out, synthetic.well_market(seed=seed or 11))
    else:
        days = 25.0 if args.days is None else args.days
        io.write_market(out, synthetic.synthetic_market(seed=seed or 7, days=days))
    return {"out": str(out), "kind": args.kind}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tickwise", description="Tick-by-tick liquidity provisioning.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("waterfill", help="max-revenue allocation for a conditions file")
    p.add_argument("conditions")
    _common(p)
    p.set_defaults(func=cmd_waterfill)

    p = sub.add_parser("optimize", help="estimate from history and solve for max return")
    p.add_argument("data", help="directory with market.json, liquidity.csv, swaps.csv")
    _common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="max-return allocations over capital levels")
    p.add_argument("conditions")
    p.add_argument("--d-list", dest="d_list", required=True, help="comma-separated ascending capitals")
    _common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("backtest", help="rolling comparison of provisioning strategies")
    p.add_argument("data")
    p.add_argument("--strategies", help=f"comma-separated subset of {','.join(STRATEGIES)}")
    p.add_argument("--workers", type=int)
    _common(p)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("estimate", help="estimate a, b, c and check model consistency")
    p.add_argument("data")
    _common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("synth", help="write a bundled synthetic dataset")
    p.add_argument("kind", choices=("market", "well", "sweep"))
    p.add_argument("--days", type=float)
    _common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        summary = args.func(args)
    except Exception as exc:  # every failure becomes a JSON error and an exit code
        payload = error_payload(exc)
        log.debug("command failed", exc_info=True)
        print(json.dumps(io.jsonable(payload)), file=sys.stderr)
        return payload["exit_code"]
    print(json.dumps(io.jsonable(summary)))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
