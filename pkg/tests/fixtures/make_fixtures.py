"""Regenerate the frozen test fixtures.

    python3 tests/fixtures/make_fixtures.py

Solver goldens are written only after the solver agrees with the
projected-gradient oracle.  Backtest goldens come from the straight-line
accounting below, which shares no code with the package's accounting.
"""

from __future__ import annotations

import math
import shutil
import sys
from pathlib import Path

import numpy as np

from tickwise import io
from tickwise.backtest import rolling_backtest, strategy_tick_by_tick
from tickwise.cli import main as cli_main
from tickwise.config import RunConfig
from tickwise.core import MarketConditions
from tickwise.maxreturn import objective_return, projected_gradient_oracle, solve_max_return
from tickwise.synthetic import candidate_ticks, sweep_scenario, well_market, synthetic_market
from tickwise.volume import SwapEvent
from tickwise.waterfill import objective_revenue, solve_waterfill

HERE = Path(__file__).resolve().parent


def small_conditions(seed=2024, n=12) -> MarketConditions:
    rng = np.random.default_rng(seed)
    ticks = candidate_ticks(2780.0, 0.004, 10, 0.003)[:n]
    a = 10 ** rng.uniform(-2, 2, len(ticks))
    b = 10 ** rng.uniform(-2, 2, len(ticks))
    c = rng.uniform(0.5, 1.5, len(ticks))
    return MarketConditions(ticks, a, b, c, 5.0, 2780.0)


def cross_checked(mc: MarketConditions):
    wf = solve_waterfill(mc.a, mc.b, mc.d)
    orc = projected_gradient_oracle(mc.a, mc.b, np.zeros(mc.n), mc.d)
    f_wf, f_or = objective_revenue(mc.a, mc.b, wf.x), objective_revenue(mc.a, mc.b, orc.x)
    assert f_wf >= f_or - 1e-9 * abs(f_or), (f_wf, f_or)
    mr = solve_max_return(mc.a, mc.b, mc.c, mc.d)
    orc = projected_gradient_oracle(mc.a, mc.b, mc.c, mc.d)
    f_mr, f_or = objective_return(mc.a, mc.b, mc.c, mr.x), objective_return(mc.a, mc.b, mc.c, orc.x)
    assert abs(f_mr - f_or) <= 1e-9 * abs(f_or), (f_mr, f_or)
    return wf, mr


# -- independent accounting ----------------------------------------------------

def unit_value(lo, hi, p):
    q = min(max(p, lo), hi)
    return p * (1 / math.sqrt(q) - 1 / math.sqrt(hi)) + (math.sqrt(q) - math.sqrt(lo))


def straight_line_period(x, ticks, values, snap_price, events, p_open, p_close, notional):
    n = len(ticks)
    L = [values[i] / unit_value(ticks[i].price_lo, ticks[i].price_hi, snap_price) for i in range(n)]
    b = [L[i] * unit_value(ticks[i].price_lo, ticks[i].price_hi, p_open) for i in range(n)]
    vol = [0.0] * n
    for ev in events:
        lo, hi = sorted((ev.price_before, ev.price_after))
        w = [0.0] * n
        covered = 0.0
        for i, t in enumerate(ticks):
            s, e = max(t.price_lo, lo), min(t.price_hi, hi)
            if e > s:
                w[i] = L[i] * (math.sqrt(e) - math.sqrt(s))
                covered += math.sqrt(e) - math.sqrt(s)
        if covered == 0:
            continue
        v = ev.volume_stable * min(1.0, covered / (math.sqrt(hi) - math.sqrt(lo)))
        tot = sum(w)
        for i in range(n):
            vol[i] += v * w[i] / tot
    fees = sum(x[i] / (x[i] + b[i]) * vol[i] * ticks[i].fee_rate for i in range(n) if x[i] > 0)
    reserve = 0.0
    for i, t in enumerate(ticks):
        if x[i] > 0:
            r = unit_value(t.price_lo, t.price_hi, p_close) / unit_value(t.price_lo, t.price_hi, p_open)
            reserve += x[i] * (r - 1)
    hedge = notional * (1 - p_close / p_open)
    d = sum(x)
    return {"fee_income": fees, "reserve_pnl": reserve, "hedge_pnl": hedge,
            "return_pct": (fees + reserve + hedge) / d, "d": d}


def backtest_golden(data, config):
    result = rolling_backtest(data, config)
    snap = data.snapshots[0]
    windows = []
    for wr in result.windows:
        w = wr.window
        events = data.events_between(w.test_start, w.test_end)
        entry = {"train_start": w.train_start, "test_start": w.test_start, "test_end": w.test_end,
                 "open_price": w.open_price, "close_price": w.close_price,
                 "train_block": w.train_label, "test_block": w.test_label, "strategies": {}}
        for name, x in wr.allocations.items():
            notional = wr.hedge_notional[name]
            entry["strategies"][name] = {
                "x": [float(v) for v in x],
                "hedge_notional": float(notional),
                **straight_line_period(list(map(float, x)), snap.ticks, list(snap.liquidity),
                                       snap.price, events, w.open_price, w.close_price, notional),
            }
        windows.append(entry)
    return {"schema_version": 1, "kind": "backtest_golden", "config": config.to_dict(),
            "windows": windows}


def gaussian_swaps(seed=5, n=1000, p0=2000.0, sigma=25.0):
    """Tiny swaps at prices drawn from N(p0, sigma), equal volume each."""
    rng = np.random.default_rng(seed)
    prices = rng.normal(p0, sigma, n)
    times = np.arange(n) * 60.0
    return [SwapEvent(float(t), "pool", float(p), float(p) * (1 + 1e-7), 1000.0)
            for t, p in zip(times, prices)]


def tick_by_tick_golden(data, config):
    snap = data.snapshots[-1]
    end = data.end
    train = data.events_between(end - config.train_days * 86400.0, end + 1e-9)
    fit = strategy_tick_by_tick(train, snap, config, p0=snap.price)
    scale = fit.d
    orc = projected_gradient_oracle(fit.a / scale, fit.b / scale, fit.c, 1.0)
    f_s = objective_return(fit.a, fit.b, fit.c, fit.x) / scale
    f_o = objective_return(fit.a / scale, fit.b / scale, fit.c, orc.x)
    assert abs(f_s - f_o) <= 1e-9 * abs(f_o), (f_s, f_o)
    return io.allocation_to_dict(fit.allocation, [t.id for t in snap.ticks], fit.d)


def run_cli(*argv):
    code = cli_main([str(a) for a in argv])
    assert code == 0, argv


def main():
    fx = HERE
    mc = small_conditions()
    io.write_conditions(fx / "conditions_small.json", mc)
    wf, mr = cross_checked(mc)
    ids = [t.id for t in mc.ticks]
    io.write_json(fx / "golden_waterfill.json", io.allocation_to_dict(wf, ids, mc.d))
    io.write_json(fx / "golden_maxreturn.json", io.allocation_to_dict(mr, ids, mc.d))
    io.write_conditions(fx / "sweep_conditions.json", sweep_scenario(1.0))

    for name, data in (
        ("market_25d", synthetic_market(seed=7, days=25, swaps_per_day=60)),
        ("market_42d", synthetic_market(seed=8, days=42, swaps_per_day=60)),
        ("well_market", well_market(seed=11)),
    ):
        shutil.rmtree(fx / name, ignore_errors=True)
        io.write_market(fx / name, data)

    config = RunConfig()
    data = io.read_market(fx / "market_25d")
    io.write_json(fx / "golden_backtest_25d.json", backtest_golden(data, config))

    io.write_swaps(fx / "gaussian_swaps.csv", gaussian_swaps())
    io.write_json(fx / "golden_tick_by_tick.json",
                  tick_by_tick_golden(io.read_market(fx / "well_market"), config))

    cli = fx / "cli"
    shutil.rmtree(cli, ignore_errors=True)
    run_cli("waterfill", fx / "conditions_small.json", "--out", cli / "waterfill")
    run_cli("optimize", fx / "well_market", "--out", cli / "optimize")
    run_cli("sweep", fx / "sweep_conditions.json", "--d-list", "0.2,0.5,1,2,5,10", "--out", cli / "sweep")
    run_cli("backtest", fx / "market_25d", "--out", cli / "backtest")
    run_cli("estimate", fx / "well_market", "--out", cli / "estimate")
    print("fixtures written to", fx, file=sys.stderr)


if __name__ == "__main__":
    main()
