"""Domain types, validation and tick-price helpers shared by every module.

All monetary quantities (fee forecasts ``a``, existing liquidity ``b``,
capital ``d`` and allocations ``x``) are denominated in stable units.
On-chain liquidity must be converted to value-at-current-price before it
is used as ``b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

FEE_TIERS = (0.0001, 0.0005, 0.0030, 0.0100)
MAX_FEE_RATE = 0.01
TICK_BASE = 1.0001
DEFAULT_EPSILON_B = 1e-12


class TickwiseError(Exception):
    """Base class for all package errors."""


class ValidationError(TickwiseError, ValueError):
    """Invalid or inconsistent input. ``field`` names the offending input when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class DegenerateObjectiveError(TickwiseError):
    """The objective is constant on the feasible set, so there is no unique optimum."""


class ConvergenceError(TickwiseError):
    """An iterative method stopped before reaching its tolerance."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


class InfeasibleAllocationError(TickwiseError, ValueError):
    """An allocation violates x >= 0 or sum(x) == d."""


class InsufficientDataError(TickwiseError):
    """Not enough history to fit or evaluate a strategy."""


def _readonly(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional", field=name)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TickSpec:
    """One candidate price range ``[price_lo, price_hi)`` from a given pool."""

    id: str
    price_lo: float
    price_hi: float
    fee_rate: float
    pool_id: str = "pool"

    def __post_init__(self):
        lo, hi = self.price_lo, self.price_hi
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo <= 0 or hi <= lo:
            raise ValidationError(
                f"tick {self.id!r}: need 0 < price_lo < price_hi, got ({lo}, {hi})",
                field="price_lo",
            )
        if not (0 < self.fee_rate <= MAX_FEE_RATE):
            raise ValidationError(
                f"tick {self.id!r}: fee_rate {self.fee_rate} outside (0, {MAX_FEE_RATE}]",
                field="fee_rate",
            )

    @property
    def mid(self) -> float:
        return 0.5 * (self.price_lo + self.price_hi)

    @property
    def width(self) -> float:
        return self.price_hi - self.price_lo

    def contains(self, price: float) -> bool:
        return self.price_lo <= price < self.price_hi


@dataclass(frozen=True)
class MarketConditions:
    """Market conditions ``(a, b, c)`` and capital ``d`` for one solve."""

    ticks: tuple[TickSpec, ...]
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float
    current_price: float

    def __post_init__(self):
        object.__setattr__(self, "ticks", tuple(self.ticks))
        for name in ("a", "b", "c"):
            object.__setattr__(self, name, _readonly(getattr(self, name), name))
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "current_price", float(self.current_price))

    @property
    def n(self) -> int:
        return len(self.ticks)

    def __eq__(self, other):
        if not isinstance(other, MarketConditions):
            return NotImplemented
        return (
            self.ticks == other.ticks
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
            and self.d == other.d
            and self.current_price == other.current_price
        )

    __hash__ = None


@dataclass(frozen=True)
class Allocation:
    """Solver output: provision ``x`` plus its dual variable and KKT certificate.

    ``dual`` is the water level ``u`` for the revenue problem and the
    multiplier ``nu`` of the budget constraint for the return problem.
    """

    x: np.ndarray
    dual: float
    objective: float
    kkt_residual: float
    status: str = "optimal"
    iterations: int = 0
    problem: str = "max_return"

    def __post_init__(self):
        object.__setattr__(self, "x", _readonly(self.x, "x"))

    @property
    def support(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.x > 0).tolist())

    def __eq__(self, other):
        if not isinstance(other, Allocation):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x)
            and self.dual == other.dual
            and self.objective == other.objective
            and self.kkt_residual == other.kkt_residual
            and self.status == other.status
            and self.iterations == other.iterations
            and self.problem == other.problem
        )

    __hash__ = None


def check_vectors(
    a,
    b,
    d: float,
    c=None,
    epsilon_b: float = DEFAULT_EPSILON_B,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Validate raw solver inputs and clamp ``b`` away from zero.

    Returns float copies ``(a, b, c, d)``; ``c`` defaults to zeros.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.zeros_like(a) if c is None else np.asarray(c, dtype=float)
    for name, v in (("a", a), ("b", b), ("c", c)):
        if v.ndim != 1:
            raise ValidationError(f"{name} must be one-dimensional", field=name)
    if not (len(a) == len(b) == len(c)):
        raise ValidationError(
            f"dimension mismatch: len(a)={len(a)}, len(b)={len(b)}, len(c)={len(c)}",
            field="b" if len(a) != len(b) else "c",
        )
    for name, v in (("a", a), ("b", b), ("c", c)):
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"{name} has non-finite entries", field=name)
        if np.any(v < 0):
            raise ValidationError(f"{name} has negative entries", field=name)
    d = float(d)
    if not math.isfinite(d) or d < 0:
        raise ValidationError(f"capital d must be finite and >= 0, got {d}", field="d")
    if epsilon_b < 0:
        raise ValidationError("epsilon_b must be >= 0", field="epsilon_b")
    b = np.maximum(b, epsilon_b * max(d, 1.0))
    return a.copy(), b, c.copy(), d


def check_tick_set(ticks: Sequence[TickSpec]) -> None:
    """Reject overlapping ranges among ticks of the same pool."""
    by_pool: dict[str, list[TickSpec]] = {}
    for t in ticks:
        by_pool.setdefault(t.pool_id, []).append(t)
    ids = [t.id for t in ticks]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate tick ids in candidate set", field="ticks")
    for pool, group in by_pool.items():
        group = sorted(group, key=lambda t: t.price_lo)
        for prev, cur in zip(group, group[1:]):
            if cur.price_lo < prev.price_hi:
                raise ValidationError(
                    f"pool {pool!r}: ticks {prev.id!r} and {cur.id!r} overlap",
                    field="ticks",
                )


def validate_conditions(
    raw: MarketConditions, epsilon_b: float = DEFAULT_EPSILON_B
) -> MarketConditions:
    """Check a set of market conditions and clamp ``b_i`` to ``epsilon_b * max(d, 1)``.

    Idempotent; tick order is preserved.
    """
    if len(raw.a) != raw.n:
        raise ValidationError(
            f"dimension mismatch: {raw.n} ticks but len(a)={len(raw.a)}", field="a"
        )
    a, b, c, d = check_vectors(raw.a, raw.b, raw.d, raw.c, epsilon_b=epsilon_b)
    if not (math.isfinite(raw.current_price) and raw.current_price > 0):
        raise ValidationError("current_price must be > 0", field="current_price")
    check_tick_set(raw.ticks)
    return replace(raw, a=a, b=b, c=c, d=d)


def tick_range_from_index(index: int, spacing: int = 1) -> tuple[float, float]:
    """Price range of the Uniswap-style tick starting at ``index``.

    >>> tick_range_from_index(0, 1)
    (1.0, 1.0001)
    """
    if spacing <= 0:
        raise ValidationError("spacing must be a positive integer", field="spacing")
    return TICK_BASE ** index, TICK_BASE ** (index + spacing)


def ticks_from_indices(
    indices: Sequence[int],
    spacing: int,
    fee_rate: float,
    pool_id: str = "pool",
    price_scale: float = 1.0,
) -> list[TickSpec]:
    """Build consecutive TickSpecs; ``price_scale`` converts raw ratios to quote units."""
    out = []
    for i in indices:
        lo, hi = tick_range_from_index(i, spacing)
        out.append(TickSpec(f"{pool_id}:{i}", lo * price_scale, hi * price_scale, fee_rate, pool_id))
    return out


def tick_index_for_price(price: float, spacing: int = 1, price_scale: float = 1.0) -> int:
    """Lowest index (a multiple of ``spacing``) whose range contains ``price``."""
    raw = math.floor(math.log(price / price_scale) / math.log(TICK_BASE))
    idx = raw - raw % spacing
    # float log can land one tick off near a boundary
    while TICK_BASE ** idx * price_scale > price:
        idx -= spacing
    while TICK_BASE ** (idx + spacing) * price_scale <= price:
        idx += spacing
    return idx


def find_tick(ticks: Sequence[TickSpec], price: float) -> int | None:
    """Index of the first tick whose range contains ``price`` (None when uncovered)."""
    for i, t in enumerate(ticks):
        if t.contains(price):
            return i
    return None
