"""Rolling train/test evaluation of provisioning strategies.

Accounting for one test window, with ``x`` held fixed for the whole window:

* fees: each tick earns ``x_i / (x_i + b_i)`` of the fees its replayed swap
  volume pays, ``volume_i * fee_rate_i``;
* reserves: ``x_i * (r_i(close) - 1)``, the revaluation of the provision;
* hedge: a short of the opening asset exposure, ``notional * (1 - close/open)``.

Replayed swaps are not affected by the provision.  Returns are simple
fractions of the capital ``d``.
"""

from __future__ import annotations

import bisect
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import RunConfig
from .core import (
    Allocation,
    InsufficientDataError,
    TickSpec,
    ValidationError,
    check_tick_set,
)
from .maxreturn import solve_max_return
from .reserves import (
    CONSTANT_PRODUCT,
    PriceMass,
    ReserveCurve,
    expected_return_c,
    price_mass_gbm,
    reserve_value_curve,
)
from .volume import (
    ConsistencyReport,
    SwapEvent,
    attribute_events,
    consistency_check,
    fit_volume_shape,
    liquidity_from_value,
    predict_fees_a,
)

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400.0


@dataclass(frozen=True)
class Snapshot:
    """Liquidity per candidate tick, valued in stable units at ``price``.

    With ``price=None`` the values are taken as already expressed at
    whatever open price they are used with.
    """

    ticks: tuple[TickSpec, ...]
    liquidity: np.ndarray
    timestamp: float = 0.0
    price: float | None = None
    block: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "ticks", tuple(self.ticks))
        liq = np.array(self.liquidity, dtype=float)
        if liq.shape != (len(self.ticks),):
            raise ValidationError("snapshot liquidity must align with its ticks", field="liquidity")
        if not np.all(np.isfinite(liq)) or np.any(liq < 0):
            raise ValidationError("snapshot liquidity must be finite and >= 0", field="liquidity")
        liq.setflags(write=False)
        object.__setattr__(self, "liquidity", liq)
        check_tick_set(self.ticks)

    def position_liquidity(self, price: float) -> np.ndarray:
        """Per-tick liquidity ``L`` (sqrt-price units) for swap attribution."""
        ref = self.price if self.price is not None else price
        return liquidity_from_value(self.ticks, self.liquidity, ref)

    def values_at(self, price: float) -> np.ndarray:
        """Existing liquidity ``b`` revalued at ``price``."""
        if self.price is None or self.price == price:
            return np.array(self.liquidity)
        unit = np.array([float(CONSTANT_PRODUCT.value(t, price)) for t in self.ticks])
        return self.position_liquidity(price) * unit


@dataclass
class MarketData:
    """Replayable history: one candidate tick set, liquidity snapshots and swaps."""

    snapshots: list[Snapshot]
    events: list[SwapEvent]
    start: float
    end: float
    initial_price: float
    blocks: list[tuple[float, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.snapshots:
            raise ValidationError("market data needs at least one liquidity snapshot", field="snapshots")
        self.snapshots = sorted(self.snapshots, key=lambda s: s.timestamp)
        self.events = sorted(self.events, key=lambda e: e.timestamp)
        self.blocks = sorted(self.blocks)
        self._times = [e.timestamp for e in self.events]
        if self.end < self.start:
            raise ValidationError("market data ends before it starts", field="end")

    @property
    def ticks(self) -> tuple[TickSpec, ...]:
        return self.snapshots[0].ticks

    def events_between(self, t0: float, t1: float) -> list[SwapEvent]:
        i = bisect.bisect_left(self._times, t0)
        j = bisect.bisect_left(self._times, t1)
        return self.events[i:j]

    def price_at(self, t: float) -> float:
        """Last traded price strictly before ``t`` (the initial price if none)."""
        i = bisect.bisect_left(self._times, t)
        return self.events[i - 1].price_after if i > 0 else self.initial_price

    def snapshot_at(self, t: float) -> Snapshot:
        times = [s.timestamp for s in self.snapshots]
        i = bisect.bisect_right(times, t)
        return self.snapshots[max(i - 1, 0)]

    def snapshot_updates(self, t0: float, t1: float) -> int:
        return sum(1 for s in self.snapshots if t0 < s.timestamp < t1)

    def label_at(self, t: float) -> str:
        if self.blocks:
            i = bisect.bisect_right([b[0] for b in self.blocks], t)
            if i > 0:
                return self.blocks[i - 1][1]
        return repr(float(t))


@dataclass(frozen=True)
class Window:
    train_start: float
    test_start: float
    test_end: float
    open_price: float
    close_price: float
    train_label: str = ""
    test_label: str = ""

    def __post_init__(self):
        if not (self.train_start < self.test_start < self.test_end):
            raise ValidationError("window needs train_start < test_start < test_end", field="test_start")
        if not (self.open_price > 0 and self.close_price > 0):
            raise ValidationError("window prices must be > 0", field="open_price")


@dataclass(frozen=True)
class PeriodResult:
    strategy: str
    fee_income: float
    reserve_pnl: float
    hedge_pnl: float
    return_pct: float
    d: float

    @property
    def pnl(self) -> float:
        return self.fee_income + self.reserve_pnl + self.hedge_pnl


@dataclass
class TickByTickFit:
    """The tick-by-tick allocation together with the estimates behind it."""

    allocation: Allocation
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float
    p0: float
    sigma_volume: float
    total_volume: float
    mass: PriceMass
    consistency: ConsistencyReport

    @property
    def x(self) -> np.ndarray:
        return self.allocation.x


def estimate_conditions(
    train_events: Sequence[SwapEvent],
    snapshot: Snapshot,
    config: RunConfig,
    p0: float | None = None,
    train_days: float | None = None,
):
    """Estimate ``(a, b, c)`` at open price ``p0`` from a training window.

    Returns ``(a, b, c, mass, sigma_volume, total_volume, report)``; the
    window's volume is rescaled from ``train_days`` to the holding horizon.
    """
    if p0 is None:
        p0 = snapshot.price
    if p0 is None:
        raise ValidationError("no open price: pass p0 or give the snapshot a price", field="price")
    ticks = snapshot.ticks
    liq = snapshot.position_liquidity(p0)
    sigma_volume, window_total = fit_volume_shape(
        train_events, ticks, liq, partial=config.partial_attribution
    )
    train_days = config.train_days if train_days is None else train_days
    scale = config.horizon_days / train_days
    total = window_total * scale
    pools = sorted({t.pool_id for t in ticks})
    if len(pools) > 1:
        # each pool keeps its own traded volume
        per_tick = attribute_events(train_events, ticks, liq,
                                    partial=config.partial_attribution).per_tick_volume
        volume = {p: scale * math.fsum(v for v, t in zip(per_tick, ticks) if t.pool_id == p)
                  for p in pools}
    else:
        volume = total
    a = predict_fees_a(p0, sigma_volume, volume, ticks, renormalize=config.renormalize_volume)
    mass = price_mass_gbm(p0, config.sigma, config.horizon_days, M=config.quad_m,
                          span_sigmas=config.quad_span, drift=config.drift)
    curves = [reserve_value_curve(t, p0) for t in ticks]
    c = expected_return_c(mass, curves)
    b = snapshot.values_at(p0)
    report = consistency_check(a, c, ticks, mass)
    return a, b, c, mass, sigma_volume, total, report


def strategy_tick_by_tick(
    train_events: Sequence[SwapEvent],
    snapshot: Snapshot,
    config: RunConfig,
    p0: float | None = None,
    d: float | None = None,
    train_days: float | None = None,
) -> TickByTickFit:
    """Fit volume and price models on the training swaps and solve for ``x``."""
    d = config.d if d is None else d
    a, b, c, mass, sigma_volume, total, report = estimate_conditions(
        train_events, snapshot, config, p0, train_days
    )
    p0 = mass.p0
    alloc = solve_max_return(a, b, c, d, epsilon_b=config.epsilon_b)
    return TickByTickFit(alloc, a, b, c, d, p0, sigma_volume, total, mass, report)


def strategy_uniform_range(p0: float, pct: float, d: float, ticks: Sequence[TickSpec]) -> np.ndarray:
    """Spread ``d`` over the ticks intersecting ``[p0 (1 - pct), p0 (1 + pct)]``.

    Each tick is weighted by the fraction of its own range inside the band,
    so fully covered ticks share equally and a half-covered edge tick gets
    half a share.  With ``pct == 0`` everything goes to the tick(s)
    containing ``p0``.
    """
    if not (0 <= pct < 1):
        raise ValidationError("pct must be in [0, 1)", field="pct")
    n = len(ticks)
    x = np.zeros(n)
    if pct == 0:
        home = [i for i, t in enumerate(ticks) if t.contains(p0)]
        if not home:
            raise ValidationError(f"no candidate tick contains p0={p0}", field="pct")
        x[home] = d / len(home)
        return x
    lo, hi = p0 * (1 - pct), p0 * (1 + pct)
    weights = np.array([
        max(0.0, min(t.price_hi, hi) - max(t.price_lo, lo)) / t.width for t in ticks
    ])
    if weights.sum() <= 0:
        raise ValidationError(f"no candidate tick intersects [{lo}, {hi}]", field="pct")
    return d * weights / weights.sum()


def strategy_delta_neutral(
    base: np.ndarray, curves: Sequence[ReserveCurve], open_price: float
) -> tuple[np.ndarray, float]:
    """Keep ``base`` and short the asset value it holds at the open.

    Returns ``(x, hedge_notional)``.
    """
    base = np.asarray(base, dtype=float)
    if len(curves) != len(base):
        raise ValidationError("curves must align with the allocation", field="curves")
    notional = 0.0
    for xi, curve in zip(base, curves):
        if not math.isclose(curve.open_price, open_price, rel_tol=1e-12):
            raise ValidationError("curves must be opened at open_price", field="open_price")
        if xi > 0:
            notional += float(xi) * curve.asset_fraction()
    return base, notional


def hedge_pnl(notional: float, open_price: float, close_price: float) -> float:
    return notional * (1.0 - close_price / open_price)


def run_period(
    x,
    snapshot: Snapshot,
    test_events: Sequence[SwapEvent],
    window: Window,
    strategy: str = "",
    hedge_notional: float = 0.0,
    partial: bool = True,
) -> PeriodResult:
    """Account for one test window with ``x`` held fixed."""
    x = np.asarray(x, dtype=float)
    ticks = snapshot.ticks
    if x.shape != (len(ticks),) or np.any(x < 0):
        raise ValidationError("allocation must be non-negative and align with the snapshot", field="x")
    d = math.fsum(x)
    p_open, p_close = window.open_price, window.close_price
    b = snapshot.values_at(p_open)
    profile = attribute_events(test_events, ticks, snapshot.position_liquidity(p_open),
                               partial=partial)
    fees = profile.per_tick_volume * np.array([t.fee_rate for t in ticks])
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(x > 0, x / (x + b), 0.0)
    fee_income = math.fsum(share * fees)
    reserve = math.fsum(
        xi * (reserve_value_curve(t, p_open).value_at(p_close) - 1.0)
        for xi, t in zip(x, ticks) if xi > 0
    )
    hedge = float(hedge_pnl(hedge_notional, p_open, p_close))
    total = fee_income + reserve + hedge
    return PeriodResult(strategy, fee_income, reserve, hedge, total / d if d > 0 else 0.0, d)


@dataclass
class WindowResult:
    window: Window
    results: dict[str, PeriodResult]
    allocations: dict[str, np.ndarray]
    hedge_notional: dict[str, float]
    snapshot_updates: int = 0
    fit: TickByTickFit | None = None


@dataclass
class ResultTable:
    """Per-window returns by strategy with mean and std footers."""

    strategies: tuple[str, ...]
    rows: list[tuple[str, str, tuple[float, ...]]]

    def column(self, strategy: str) -> np.ndarray:
        k = self.strategies.index(strategy)
        return np.array([r[2][k] for r in self.rows])

    @property
    def mean(self) -> tuple[float, ...]:
        return tuple(float(np.mean(self.column(s))) for s in self.strategies)

    @property
    def std(self) -> tuple[float, ...]:
        # population std, as in the published comparison tables
        return tuple(float(np.std(self.column(s))) for s in self.strategies)

    def __eq__(self, other):
        if not isinstance(other, ResultTable):
            return NotImplemented
        return self.strategies == other.strategies and self.rows == other.rows


@dataclass
class BacktestResult:
    table: ResultTable
    windows: list[WindowResult]


def make_windows(data: MarketData, train_days: float, test_days: float,
                 stride_days: float) -> list[Window]:
    """Train/test windows at a fixed stride, the first starting at ``data.start``."""
    span = data.end - data.start
    need = (train_days + test_days) * SECONDS_PER_DAY
    if span < need * (1 - 1e-12):
        raise InsufficientDataError(
            f"data spans {span / SECONDS_PER_DAY:g} days, need train + test = "
            f"{train_days + test_days:g}"
        )
    count = math.floor((span - need) / (stride_days * SECONDS_PER_DAY) + 1e-9) + 1
    out = []
    for k in range(count):
        t0 = data.start + k * stride_days * SECONDS_PER_DAY
        t1 = t0 + train_days * SECONDS_PER_DAY
        t2 = t1 + test_days * SECONDS_PER_DAY
        out.append(Window(t0, t1, t2, data.price_at(t1), data.price_at(t2),
                          data.label_at(t0), data.label_at(t1)))
    return out


def evaluate_window(data: MarketData, window: Window, config: RunConfig,
                    strategies: Sequence[str]) -> WindowResult:
    snapshot = data.snapshot_at(window.test_start)
    ticks = snapshot.ticks
    p0 = window.open_price
    d = config.d
    train = data.events_between(window.train_start, window.test_start)
    test = data.events_between(window.test_start, window.test_end)
    allocations: dict[str, np.ndarray] = {}
    hedges: dict[str, float] = {}
    fit = None

    def tick_by_tick():
        nonlocal fit
        if fit is None:
            fit = strategy_tick_by_tick(train, snapshot, config, p0=p0, d=d,
                                        train_days=config.train_days)
        return np.array(fit.x)

    def uniform():
        return strategy_uniform_range(p0, config.range_pct, d, ticks)

    for name in strategies:
        if name == "tick_by_tick":
            allocations[name], hedges[name] = tick_by_tick(), 0.0
        elif name == "range":
            allocations[name], hedges[name] = uniform(), 0.0
        elif name == "delta_neutral":
            base = uniform() if config.hedge_base == "range" else tick_by_tick()
            curves = [reserve_value_curve(t, p0) for t in ticks]
            allocations[name], hedges[name] = strategy_delta_neutral(base, curves, p0)
    results = {
        name: run_period(allocations[name], snapshot, test, window, name, hedges[name],
                         partial=config.partial_attribution)
        for name in strategies
    }
    updates = data.snapshot_updates(window.test_start, window.test_end)
    if updates:
        log.warning("liquidity snapshot changes inside test window %s ignored", window.test_label)
    return WindowResult(window, results, allocations, hedges, updates, fit)


def rolling_backtest(
    data: MarketData,
    config: RunConfig,
    strategies: Sequence[str] | None = None,
) -> BacktestResult:
    """Fit on ``[start - S, start)``, evaluate on ``[start, start + T)``, every ``R`` days."""
    strategies = tuple(strategies or config.strategies)
    windows = make_windows(data, config.train_days, config.horizon_days, config.stride_days)

    def one(w):
        return evaluate_window(data, w, config, strategies)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            done = list(pool.map(one, windows))
    else:
        done = [one(w) for w in windows]
    rows = [
        (wr.window.train_label, wr.window.test_label,
         tuple(wr.results[s].return_pct for s in strategies))
        for wr in done
    ]
    return BacktestResult(ResultTable(strategies, rows), done)

