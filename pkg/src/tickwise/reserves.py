"""Reserve-value curves and expected reserve returns under a GBM price model.

A unit of capital provisioned to a tick at the open price is worth
``r(p)`` units once the price moves to ``p``.  For constant-product
concentrated liquidity on ``[l, h]`` with position liquidity ``L``:

    p_hat  = clamp(p, l, h)
    asset  = L * (1/sqrt(p_hat) - 1/sqrt(h))
    stable = L * (sqrt(p_hat) - sqrt(l))
    V(p)   = p * asset + stable,        r(p) = V(p) / V(open)

Below the range the position is all asset (value linear in ``p``); above
it, all stable (constant value).  The expected return of tick ``i`` is
``c_i = sum_k mass_k * r_i(price_k)`` over a discretized next-period
price distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.special import ndtr

from .core import TickSpec, ValidationError

DAYS_PER_YEAR = 365.0


class ReserveModel(Protocol):
    """Position value per unit liquidity, split into total and asset-side value."""

    def value(self, tick: TickSpec, price, liquidity: float = 1.0) -> np.ndarray: ...

    def asset_value(self, tick: TickSpec, price, liquidity: float = 1.0) -> np.ndarray: ...


class ConstantProductReserves:
    """Uniswap-V3-style in-range reserves."""

    def amounts(self, tick: TickSpec, price, liquidity: float = 1.0):
        p = np.clip(np.asarray(price, dtype=float), tick.price_lo, tick.price_hi)
        sp = np.sqrt(p)
        asset = liquidity * (1.0 / sp - 1.0 / math.sqrt(tick.price_hi))
        stable = liquidity * (sp - math.sqrt(tick.price_lo))
        return asset, stable

    def value(self, tick, price, liquidity=1.0):
        asset, stable = self.amounts(tick, price, liquidity)
        return np.asarray(price, dtype=float) * asset + stable

    def asset_value(self, tick, price, liquidity=1.0):
        asset, _ = self.amounts(tick, price, liquidity)
        return np.asarray(price, dtype=float) * asset


CONSTANT_PRODUCT = ConstantProductReserves()


@dataclass(frozen=True)
class ReserveCurve:
    """Value at price ``p`` of one unit of capital provisioned at ``open_price``."""

    tick: TickSpec
    open_price: float
    model: ReserveModel = field(default=CONSTANT_PRODUCT, compare=False)
    liquidity: float = field(default=1.0, compare=False)

    def __post_init__(self):
        if not self.open_price > 0:
            raise ValidationError("open_price must be > 0", field="open_price")
        v0 = float(self.model.value(self.tick, self.open_price, self.liquidity))
        assert v0 > 0, "position has zero value at the open price"
        object.__setattr__(self, "_v0", v0)

    def value_at(self, price):
        """Return ``r(price)``; scalar in, scalar out."""
        v = self.model.value(self.tick, price, self.liquidity) / self._v0
        return float(v) if np.ndim(v) == 0 else v

    def asset_fraction(self) -> float:
        """Share of the opening value held as asset."""
        return float(self.model.asset_value(self.tick, self.open_price, self.liquidity)) / self._v0


def reserve_value_curve(tick: TickSpec, open_price: float,
                        model: ReserveModel = CONSTANT_PRODUCT) -> ReserveCurve:
    return ReserveCurve(tick, float(open_price), model)


@dataclass(frozen=True)
class PriceMass:
    """Discretized distribution of the next-period price.

    ``grid`` holds ascending log-price cell centers; the two edge cells
    absorb the tails.
    """

    grid: np.ndarray
    mass: np.ndarray
    horizon_days: float
    sigma_annual: float
    p0: float
    drift: float = 0.0

    @property
    def prices(self) -> np.ndarray:
        return np.exp(self.grid)

    def cdf_boundaries(self) -> tuple[np.ndarray, np.ndarray]:
        """Interior cell boundaries (log-price) and the CDF evaluated there."""
        bounds = 0.5 * (self.grid[1:] + self.grid[:-1])
        return bounds, np.cumsum(self.mass)[:-1]

    def median(self) -> float:
        bounds, cdf = self.cdf_boundaries()
        return float(np.exp(np.interp(0.5, cdf, bounds)))

    def moments(self, lo: float = 0.0, hi: float = math.inf) -> tuple[float, float]:
        """Mean and standard deviation of price, conditioned on ``lo <= P < hi``."""
        p = self.prices
        sel = (p >= lo) & (p < hi)
        w = self.mass[sel]
        if w.sum() <= 0:
            return math.nan, math.nan
        w = w / w.sum()
        mean = float(w @ p[sel])
        return mean, float(math.sqrt(max(0.0, w @ (p[sel] - mean) ** 2)))


def price_mass_gbm(
    p0: float,
    sigma_annual: float,
    horizon_days: float,
    M: int = 4097,
    span_sigmas: float = 8.0,
    drift: float = 0.0,
    min_log_halfwidth: float = 1e-4,
) -> PriceMass:
    """Next-period price mass under geometric Brownian motion.

    ``log P_T ~ N(log p0 + (drift - sigma^2/2) tau, sigma^2 tau)`` with
    ``tau = horizon_days / 365``.  ``M`` (odd) cell centers span
    ``+-span_sigmas`` standard deviations of log-price around the mean,
    never narrower than ``min_log_halfwidth`` so that a vanishing
    volatility still collapses onto a single cell.
    """
    if not (p0 > 0 and math.isfinite(p0)):
        raise ValidationError("p0 must be > 0", field="p0")
    if not (sigma_annual > 0 and math.isfinite(sigma_annual)):
        raise ValidationError("sigma_annual must be > 0", field="sigma_annual")
    if not (horizon_days > 0 and math.isfinite(horizon_days)):
        raise ValidationError("horizon_days must be > 0", field="horizon_days")
    if M < 3 or M % 2 == 0:
        raise ValidationError("M must be an odd integer >= 3", field="M")
    if not span_sigmas > 0:
        raise ValidationError("span_sigmas must be > 0", field="span_sigmas")

    tau = horizon_days / DAYS_PER_YEAR
    s = sigma_annual * math.sqrt(tau)
    mean = math.log(p0) + (drift - 0.5 * sigma_annual**2) * tau
    half = max(span_sigmas * s, min_log_halfwidth)
    offsets = np.linspace(-half, half, M)
    grid = mean + offsets
    z = 0.5 * (offsets[1:] + offsets[:-1]) / s
    # lower CDF on the left half, survival function on the right: no tail cancellation
    lower = ndtr(z)
    upper = ndtr(-z)
    mid = M // 2
    mass = np.empty(M)
    mass[0] = lower[0]
    mass[1:mid] = np.diff(lower[:mid])
    mass[mid] = 1.0 - lower[mid - 1] - upper[mid]
    mass[mid + 1:M - 1] = -np.diff(upper[mid:])
    mass[M - 1] = upper[-1]
    mass = np.clip(mass, 0.0, None)
    mass /= math.fsum(mass)
    grid.setflags(write=False)
    mass.setflags(write=False)
    return PriceMass(grid, mass, float(horizon_days), float(sigma_annual), float(p0), float(drift))


def expected_return_c(mass: PriceMass, curves: Sequence[ReserveCurve]) -> np.ndarray:
    """Expected per-unit reserve return of each tick, in candidate-set order."""
    prices = mass.prices
    c = np.empty(len(curves))
    for i, curve in enumerate(curves):
        if not math.isclose(curve.open_price, mass.p0, rel_tol=1e-12):
            raise ValidationError(
                f"curve {curve.tick.id!r} opened at {curve.open_price}, mass centered on {mass.p0}",
                field="open_price",
            )
        c[i] = mass.mass @ curve.value_at(prices)
    return c


def expected_returns_for_ticks(
    ticks: Sequence[TickSpec],
    p0: float,
    sigma_annual: float,
    horizon_days: float,
    **mass_kwargs,
) -> tuple[np.ndarray, PriceMass]:
    """Convenience: build the GBM mass and every tick's curve, return ``(c, mass)``."""
    mass = price_mass_gbm(p0, sigma_annual, horizon_days, **mass_kwargs)
    curves = [reserve_value_curve(t, p0) for t in ticks]
    return expected_return_c(mass, curves), mass
