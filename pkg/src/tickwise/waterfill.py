"""Maximum-revenue provisioning solved exactly by water-filling.

Each tick with forecast fees ``a_i > 0`` is a patch of ground of height
``sqrt(b_i / a_i)`` and width ``sqrt(a_i * b_i)``.  Flooding the landscape
with ``d`` units of water to level ``u`` gives the optimal provision
``x_i = max(0, sqrt(a_i b_i) * u - b_i)``.  The water volume is piecewise
linear in ``u`` so the level is found exactly by scanning the sorted
breakpoints; no iteration tolerance is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_EPSILON_B,
    Allocation,
    DegenerateObjectiveError,
    InfeasibleAllocationError,
    check_vectors,
)


@dataclass(frozen=True)
class WaterfillBreakpoint:
    tick_index: int
    height: float
    width: float


def waterfill_breakpoints(a, b, epsilon_b: float = DEFAULT_EPSILON_B) -> list[WaterfillBreakpoint]:
    """Breakpoints of the water-volume function, sorted by height.

    Ticks with ``a_i == 0`` have infinite height and are left out.
    """
    a, b, _, _ = check_vectors(a, b, 0.0, epsilon_b=epsilon_b)
    idx = np.flatnonzero(a > 0)
    heights = np.sqrt(b[idx]) / np.sqrt(a[idx])
    widths = np.sqrt(a[idx]) * np.sqrt(b[idx])
    order = np.argsort(heights, kind="stable")
    return [
        WaterfillBreakpoint(int(idx[k]), float(heights[k]), float(widths[k])) for k in order
    ]


def water_volume(u: float, a, b) -> float:
    """Total water above the landscape at level ``u`` (left side of the fill condition)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pos = a > 0
    w = np.sqrt(a[pos]) * np.sqrt(b[pos])
    h = np.sqrt(b[pos]) / np.sqrt(a[pos])
    return float(np.sum(np.maximum(0.0, w * (u - h))))


def objective_revenue(a, b, x) -> float:
    """Fee revenue ``sum(a_i * x_i / (x_i + b_i))``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.sum(a * x / (x + b)))


def solve_waterfill(a, b, d: float, epsilon_b: float = DEFAULT_EPSILON_B) -> Allocation:
    """Solve ``max sum a_i x_i/(x_i+b_i)`` s.t. ``x >= 0, sum(x) = d``.

    Args:
        a: Forecast fee revenue per tick.
        b: Existing liquidity value per tick (zeros are clamped to
            ``epsilon_b * max(d, 1)``).
        d: Capital to allocate.

    Returns:
        Allocation whose ``dual`` is the water level ``u``.

    Raises:
        DegenerateObjectiveError: every ``a_i`` is zero while ``d > 0``.
    """
    a, b, _, d = check_vectors(a, b, d, epsilon_b=epsilon_b)
    n = len(a)
    pos = np.flatnonzero(a > 0)
    if d > 0 and len(pos) == 0:
        raise DegenerateObjectiveError(
            "all fee forecasts are zero: revenue is constant, no unique provision"
        )

    x = np.zeros(n)
    if len(pos) == 0:
        # d == 0 and nothing to fill
        return Allocation(x, 0.0, 0.0, 0.0, problem="max_revenue")

    w = np.sqrt(a[pos]) * np.sqrt(b[pos])
    h = np.sqrt(b[pos]) / np.sqrt(a[pos])
    order = np.argsort(h, kind="stable")
    hs, ws = h[order], w[order]
    if d == 0:
        u = float(hs[0])
    else:
        # level if the first k+1 patches are submerged: (d + sum b) / sum w
        cum_w = np.cumsum(ws)
        cum_b = np.cumsum(ws * hs)
        levels = (d + cum_b) / cum_w
        fits = levels[:-1] <= hs[1:]
        k = int(np.argmax(fits)) if fits.any() else len(hs) - 1
        u = float(levels[k])
    x[pos] = np.maximum(0.0, w * (u - h))

    residual = verify_kkt_revenue(a, b, d, x, tol=np.inf)
    return Allocation(x, u, objective_revenue(a, b, x), residual, problem="max_revenue")


def verify_kkt_revenue(a, b, d: float, x, tol: float = 1e-10,
                       epsilon_b: float = DEFAULT_EPSILON_B) -> float:
    """KKT residual of ``x`` for the maximum-revenue problem.

    The multiplier of the budget constraint is taken as the smallest value
    that makes every marginal revenue ``a_i b_i / (x_i + b_i)^2`` feasible,
    ``nu = max_i``; the residual is then the worst of the complementary
    slackness gap ``x_i (nu - grad_i)`` (relative to ``nu * max(d, 1)``)
    and the primal feasibility gaps.  A residual ``<= tol`` certifies
    optimality.

    Raises:
        InfeasibleAllocationError: ``x`` has negative entries or misses the
            budget by more than ``tol * max(d, 1)``.
    """
    a, b, _, d = check_vectors(a, b, d, epsilon_b=epsilon_b)
    x = np.asarray(x, dtype=float)
    if x.shape != a.shape:
        raise InfeasibleAllocationError(f"x has shape {x.shape}, expected {a.shape}")
    scale = max(d, 1.0)
    neg_gap = max(0.0, -float(x.min(initial=0.0))) / scale
    sum_gap = abs(float(np.sum(x)) - d) / scale
    if neg_gap > tol or sum_gap > tol:
        raise InfeasibleAllocationError(
            f"allocation infeasible: negativity {neg_gap:.3g}, budget gap {sum_gap:.3g}"
        )
    if len(x) == 0:
        return max(neg_gap, sum_gap)
    grad = a * b / (x + b) ** 2
    nu = float(grad.max())
    slack = np.clip(x, 0.0, None) * (nu - grad)
    cs = float(slack.max()) / (scale * (nu if nu > 0 else 1.0))
    return max(cs, neg_gap, sum_gap)
