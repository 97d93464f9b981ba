"""Swap-volume attribution and fee forecasts per tick.

A swap that moves the price from one tick to another trades through every
tick on the way.  Inside a tick with liquidity ``L`` the stable side of the
trade is ``L * |sqrt(p_exit) - sqrt(p_enter)|``, which fixes each tick's
share of the reported volume.  The forecast ``a`` centers a Gaussian on the
current price, integrates it over each tick, scales by the forecast volume
and multiplies by the tick's fee rate.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr

from .core import InsufficientDataError, TickSpec, TickwiseError, ValidationError
from .reserves import CONSTANT_PRODUCT, PriceMass

log = logging.getLogger(__name__)


class AttributionError(TickwiseError, ValueError):
    """A swap cannot be attributed to the candidate ticks."""

    def __init__(self, message: str, uncovered: tuple[float, float] | None = None):
        super().__init__(message)
        self.uncovered = uncovered


@dataclass(frozen=True)
class SwapEvent:
    timestamp: float
    pool_id: str
    price_before: float
    price_after: float
    volume_stable: float

    def __post_init__(self):
        if not (self.price_before > 0 and self.price_after > 0):
            raise ValidationError("swap prices must be > 0", field="price_before")
        if not (self.volume_stable > 0 and math.isfinite(self.volume_stable)):
            raise ValidationError("swap volume must be > 0", field="volume_stable")


@dataclass(frozen=True)
class VolumeProfile:
    per_tick_volume: np.ndarray
    window_days: float
    total: float
    dropped_volume: float = 0.0
    n_events: int = field(default=0, compare=False)


class VolumeShape(NamedTuple):
    sigma_volume: float
    total_per_period: float


def liquidity_from_value(ticks: Sequence[TickSpec], values, price: float) -> np.ndarray:
    """Convert per-tick value (stable units at ``price``) to position liquidity ``L``."""
    values = np.asarray(values, dtype=float)
    unit = np.array([float(CONSTANT_PRODUCT.value(t, price)) for t in ticks])
    return values / unit


def _conserve(shares: np.ndarray, total: float) -> np.ndarray:
    """Make the exactly-rounded sum of ``shares`` equal ``total``.

    Shares are snapped to multiples of ``ulp(total)``, which keeps every
    partial sum exact, and the largest absorbs the remainder.
    """
    if not shares.any():
        return shares
    q = math.ulp(total)
    shares = np.round(shares / q) * q
    k = int(np.argmax(shares))
    shares[k] = 0.0
    shares[k] = total - math.fsum(shares)
    return shares


def attribute_swap(
    event: SwapEvent,
    ticks: Sequence[TickSpec],
    liquidity,
    partial: bool = False,
) -> np.ndarray:
    """Split one swap's stable volume across the ticks its price path crosses.

    Args:
        event: The swap.
        ticks: Candidate ticks of the swap's pool, in any order.
        liquidity: Position liquidity ``L`` per tick (see
            :func:`liquidity_from_value`).
        partial: When the path leaves the candidate ticks, attribute only the
            covered part (volume scaled by its share of the path in
            sqrt-price, assuming uniform liquidity) instead of raising.

    Returns:
        Volume per tick, aligned with ``ticks``; sums exactly (``math.fsum``)
        to the attributed volume.

    Raises:
        AttributionError: the path is not covered by ``ticks`` or a crossed
            tick holds no liquidity.
    """
    liquidity = np.asarray(liquidity, dtype=float)
    n = len(ticks)
    if len(liquidity) != n:
        raise ValidationError("liquidity must align with ticks", field="liquidity")
    if len({t.pool_id for t in ticks}) > 1:
        raise ValidationError("attribute_swap needs ticks from one pool", field="ticks")
    out = np.zeros(n)
    lo_p = min(event.price_before, event.price_after)
    hi_p = max(event.price_before, event.price_after)
    order = sorted(range(n), key=lambda i: ticks[i].price_lo)

    full = math.sqrt(hi_p) - math.sqrt(lo_p)
    if full == 0:
        # a move below sqrt-price resolution trades at a single point
        hi_p = lo_p
    if lo_p == hi_p:
        home = [i for i in order if ticks[i].contains(lo_p)]
        if not home:
            home = [i for i in order if ticks[i].price_hi == lo_p]
        if not home:
            if partial:
                return out
            raise AttributionError(f"price {lo_p} outside candidate ticks", (lo_p, hi_p))
        out[home[0]] = event.volume_stable
        return out

    weights = np.zeros(n)
    covered = 0.0
    cursor = lo_p
    for i in order:
        t = ticks[i]
        enter = max(t.price_lo, lo_p)
        exit_ = min(t.price_hi, hi_p)
        if exit_ <= enter:
            continue
        if enter > cursor and not partial:
            raise AttributionError(
                f"price path uncovered on [{cursor}, {enter}]", (cursor, enter)
            )
        if liquidity[i] <= 0:
            raise AttributionError(f"tick {t.id!r} crossed with zero liquidity")
        span = math.sqrt(exit_) - math.sqrt(enter)
        weights[i] = liquidity[i] * span
        covered += span
        cursor = max(cursor, exit_)
    if cursor < hi_p and not partial:
        raise AttributionError(f"price path uncovered on [{cursor}, {hi_p}]", (cursor, hi_p))
    if covered == 0:
        return out
    volume = event.volume_stable
    if covered < full:
        volume *= covered / full
    out = weights / math.fsum(weights) * volume
    return _conserve(out, volume)


def attribute_events(
    events: Sequence[SwapEvent],
    ticks: Sequence[TickSpec],
    liquidity,
    window_days: float = math.nan,
    partial: bool = False,
) -> VolumeProfile:
    """Attribute many swaps over a candidate set that may span several pools.

    Swaps from pools outside the candidate set are ignored.
    """
    liquidity = np.asarray(liquidity, dtype=float)
    pools: dict[str, list[int]] = {}
    for i, t in enumerate(ticks):
        pools.setdefault(t.pool_id, []).append(i)
    per_tick = np.zeros(len(ticks))
    dropped = 0.0
    count = 0
    for ev in events:
        idx = pools.get(ev.pool_id)
        if idx is None:
            continue
        count += 1
        part = attribute_swap(ev, [ticks[i] for i in idx], liquidity[idx], partial=partial)
        per_tick[idx] += part
        dropped += ev.volume_stable - math.fsum(part)
    return VolumeProfile(per_tick, window_days, math.fsum(per_tick), dropped, count)


def fit_volume_shape(
    events: Sequence[SwapEvent],
    ticks: Sequence[TickSpec],
    liquidity,
    partial: bool = False,
) -> VolumeShape:
    """Volume-weighted spread of traded prices and total volume over the window.

    ``sigma_volume`` is the standard deviation of tick mid-prices weighted
    by attributed volume.

    Raises:
        InsufficientDataError: no events, or nothing attributable.
    """
    if len(events) == 0:
        raise InsufficientDataError("no swap events in the fitting window")
    profile = attribute_events(events, ticks, liquidity, partial=partial)
    if profile.total <= 0:
        raise InsufficientDataError("no swap volume attributable to the candidate ticks")
    mids = np.array([t.mid for t in ticks])
    w = profile.per_tick_volume / profile.total
    center = float(w @ mids)
    sigma = math.sqrt(max(0.0, float(w @ (mids - center) ** 2)))
    return VolumeShape(sigma, profile.total)


def _gaussian_cell_mass(lo: np.ndarray, hi: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    zl = (lo - mu) / sigma
    zh = (hi - mu) / sigma
    # upper tail through survival functions to keep precision
    return np.where(zl >= 0, ndtr(-zl) - ndtr(-zh), ndtr(zh) - ndtr(zl))


def predict_fees_a(
    p0: float,
    sigma_volume: float,
    total_volume: float | Mapping[str, float],
    ticks: Sequence[TickSpec],
    renormalize: bool = True,
) -> np.ndarray:
    """Forecast fee revenue per tick from a Gaussian volume profile centered at ``p0``.

    ``a_i = fee_rate_i * total_volume * mass_i`` where ``mass_i`` is the
    Gaussian mass over the tick's range.  With ``renormalize`` the masses
    of each pool's ticks are rescaled to sum to one, so that the pool's
    forecast volume is conserved.  ``total_volume`` may map pool ids to
    per-pool volumes.
    """
    if not (sigma_volume >= 0 and math.isfinite(sigma_volume)):
        raise ValidationError("sigma_volume must be >= 0", field="sigma_volume")
    lo = np.array([t.price_lo for t in ticks])
    hi = np.array([t.price_hi for t in ticks])
    fee = np.array([t.fee_rate for t in ticks])
    if sigma_volume == 0:
        mass = ((lo <= p0) & (p0 < hi)).astype(float)
        if not mass.any():
            raise ValidationError(
                f"sigma_volume is 0 and p0={p0} lies outside every candidate tick", field="p0"
            )
    else:
        mass = _gaussian_cell_mass(lo, hi, p0, sigma_volume)

    a = np.zeros(len(ticks))
    pools: dict[str, list[int]] = {}
    for i, t in enumerate(ticks):
        pools.setdefault(t.pool_id, []).append(i)
    for pool, idx in pools.items():
        if isinstance(total_volume, Mapping):
            volume = float(total_volume.get(pool, 0.0))
        else:
            volume = float(total_volume)
        if volume < 0:
            raise ValidationError("total_volume must be >= 0", field="total_volume")
        m = mass[idx]
        if renormalize:
            s = math.fsum(m)
            if s <= 0:
                if sigma_volume > 0:
                    raise ValidationError(
                        f"pool {pool!r}: no Gaussian mass on its ticks", field="ticks"
                    )
                continue
            m = m / s
        a[idx] = fee[idx] * volume * m
    return a


@dataclass(frozen=True)
class ConsistencyReport:
    volume_center: float
    volume_spread: float
    price_center: float
    price_spread: float
    tick_width: float
    spread_ratio: float
    loss_center: float
    flags: tuple[str, ...]

    @property
    def consistent(self) -> bool:
        return not self.flags

    def to_dict(self) -> dict:
        return {
            "volume_center": self.volume_center,
            "volume_spread": self.volume_spread,
            "price_center": self.price_center,
            "price_spread": self.price_spread,
            "tick_width": self.tick_width,
            "spread_ratio": self.spread_ratio,
            "loss_center": self.loss_center,
            "flags": list(self.flags),
        }


def consistency_check(
    a,
    c,
    ticks: Sequence[TickSpec],
    mass: PriceMass,
    spread_bounds: tuple[float, float] = (1 / 3, 3.0),
) -> ConsistencyReport:
    """Compare the volume model behind ``a`` with the price model behind ``c``.

    Both are summarized by a center and a spread in price units.  The
    volume side uses the fee-deflated forecast; the price side uses the
    mean of the next-period price and its spread restricted to the
    candidate range.  Flags ``center_offset`` (centers more than one tick
    width apart) and ``spread_ratio`` (ratio outside ``spread_bounds``) are
    logged as warnings; nothing is raised.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    if not (len(a) == len(c) == len(ticks)):
        raise ValidationError("a, c and ticks must align", field="a")
    mids = np.array([t.mid for t in ticks])
    widths = np.array([t.width for t in ticks])
    fee = np.array([t.fee_rate for t in ticks])
    vol = a / fee
    flags = []
    if vol.sum() > 0:
        w = vol / vol.sum()
        v_center = float(w @ mids)
        v_spread = math.sqrt(max(0.0, float(w @ (mids - v_center) ** 2)))
    else:
        v_center = v_spread = math.nan
        flags.append("no_volume")
    lo = min(t.price_lo for t in ticks)
    hi = max(t.price_hi for t in ticks)
    # center of future prices is the full-distribution mean; spreads are compared
    # over the candidate range, where the fee forecast lives
    p_center = mass.moments()[0]
    p_spread = mass.moments(lo, hi)[1]

    home = next((i for i, t in enumerate(ticks) if t.contains(v_center)), None)
    width = float(widths[home]) if home is not None else float(np.median(widths))
    ratio = v_spread / p_spread if p_spread > 0 else math.inf
    if abs(v_center - p_center) > width:
        flags.append("center_offset")
    if not (spread_bounds[0] <= ratio <= spread_bounds[1]):
        flags.append("spread_ratio")
    loss_center = float(mids[int(np.argmin(c))]) if len(c) else math.nan
    for flag in flags:
        log.warning("volume/volatility models inconsistent: %s", flag)
    return ConsistencyReport(v_center, v_spread, p_center, p_spread, width, ratio,
                             loss_center, tuple(flags))
