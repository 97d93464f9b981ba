"""Seeded synthetic markets for demos, fixtures and phenomenology checks.

Real on-chain history is not bundled; these generators produce liquidity
profiles with low-liquidity wells and swap streams whose volumes follow
from the liquidity along each price path.
"""

from __future__ import annotations

import math

import numpy as np

from .backtest import SECONDS_PER_DAY, MarketData, Snapshot
from .core import MarketConditions, TickSpec, tick_index_for_price, ticks_from_indices
from .reserves import expected_returns_for_ticks
from .volume import SwapEvent, liquidity_from_value, predict_fees_a

P0 = 2780.0


def candidate_ticks(p0: float, pct: float, spacing: int, fee_rate: float,
                    pool_id: str = "pool") -> list[TickSpec]:
    """Consecutive ticks covering ``[p0 (1 - pct), p0 (1 + pct)]``."""
    lo = tick_index_for_price(p0 * (1 - pct), spacing)
    hi = tick_index_for_price(p0 * (1 + pct), spacing)
    return ticks_from_indices(range(lo, hi + spacing, spacing), spacing, fee_rate, pool_id)


def liquidity_profile(ticks, p0: float, level: float, wells=((-0.007, 0.003), (0.007, 0.003)),
                      depth: float = 0.9, floor: float = 0.3, decay: float = 0.03) -> np.ndarray:
    """Liquidity value per tick: a bump at ``p0`` with flat-bottomed wells.

    ``wells`` holds ``(center, half_width)`` pairs as fractions of ``p0``.
    """
    rel = np.array([t.mid for t in ticks]) / p0 - 1.0
    dip = np.zeros_like(rel)
    for center, half in wells:
        dip += np.exp(-np.abs((rel - center) / half) ** 8)
    return level * (floor + np.exp(-(rel / decay) ** 2)) * (1.0 - depth * np.minimum(dip, 1.0))


def sweep_scenario(d: float = 1.0) -> MarketConditions:
    """Capital-sweep scenario in units of one million stable.

    Ticks of the 5 bp tier (spacing 10) within 10% of ``P0``; fees from a
    Gaussian volume profile (1.5% of price wide, 6 per week in fees) at
    ``P0``; liquidity with wells 0.7% either side of the price; ``c`` from
    80% volatility over 7 days.
    """
    ticks = candidate_ticks(P0, 0.10, 10, 0.0005)
    a = predict_fees_a(P0, 0.015 * P0, 6.0 / 0.0005, ticks)
    b = liquidity_profile(ticks, P0, 2.0)
    c, _ = expected_returns_for_ticks(ticks, P0, 0.8, 7)
    return MarketConditions(ticks, a, b, c, d, P0)


def _path_volume(lo_p, hi_p, edges_lo, edges_hi, liq) -> float:
    enter = np.maximum(edges_lo, lo_p)
    exit_ = np.minimum(edges_hi, hi_p)
    span = np.where(exit_ > enter, np.sqrt(np.maximum(exit_, enter)) - np.sqrt(enter), 0.0)
    return float(np.sum(liq * span))


def synthetic_market(
    seed: int = 7,
    days: float = 25.0,
    p0: float = P0,
    sigma_annual: float = 0.5,
    swaps_per_day: int = 120,
    noise: float = 0.002,
    pct: float = 0.25,
    spacing: int = 60,
    fee_rate: float = 0.003,
    level: float = 2.0e6,
    wells=((-0.03, 0.012), (0.04, 0.015)),
    start: float = 1_704_067_200.0,
    start_block: int = 18_908_000,
) -> MarketData:
    """A replayable market: static liquidity snapshot, GBM price and noisy swaps.

    Each swap moves the pool price from its current value to the efficient
    GBM price times lognormal noise; its volume is the stable side traded
    through the ticks on that path.  Hourly block labels assume 12 s blocks.
    """
    rng = np.random.default_rng(seed)
    ticks = candidate_ticks(p0, pct, spacing, fee_rate)
    values = liquidity_profile(ticks, p0, level, wells=wells, floor=0.5, decay=0.08)
    snapshot = Snapshot(ticks, values, timestamp=start, price=p0, block=str(start_block))
    liq = liquidity_from_value(ticks, values, p0)
    lo_edges = np.array([t.price_lo for t in ticks])
    hi_edges = np.array([t.price_hi for t in ticks])
    p_min, p_max = lo_edges[0] * 1.0001, hi_edges[-1] / 1.0001

    n = int(round(days * swaps_per_day))
    times = np.sort(rng.uniform(0.0, days * SECONDS_PER_DAY, n))
    dt_years = np.diff(np.concatenate([[0.0], times])) / (365.0 * SECONDS_PER_DAY)
    log_eff = math.log(p0) + np.cumsum(sigma_annual * np.sqrt(dt_years) * rng.standard_normal(n))
    shocks = noise * rng.standard_normal(n)

    events = []
    price = p0
    for t, le, z in zip(times, log_eff, shocks):
        target = min(max(math.exp(le + z), p_min), p_max)
        if target == price:
            continue
        vol = _path_volume(min(price, target), max(price, target), lo_edges, hi_edges, liq)
        if vol <= 0:
            continue
        events.append(SwapEvent(float(start + t), "pool", price, target, vol))
        price = target

    hours = int(math.ceil(days * 24))
    blocks = [(start + h * 3600.0, str(start_block + h * 300)) for h in range(hours + 1)]
    return MarketData([snapshot], events, start, start + days * SECONDS_PER_DAY, p0, blocks)


def well_market(seed: int = 11, history_days: float = 7.0) -> MarketData:
    """Seven days of history before an allocation at ``P0`` on 5 bp ticks within 10%.

    Liquidity is deepest at the price with a shallow stretch 0.4% to 1.6%
    above it.  The snapshot is valued at ``P0``, which serves as the open price.
    """
    return synthetic_market(
        seed=seed, days=history_days, p0=P0, sigma_annual=0.3, swaps_per_day=150,
        noise=0.001, pct=0.10, spacing=10, fee_rate=0.0005, level=2.0e6,
        wells=((0.01, 0.006),),
    )
