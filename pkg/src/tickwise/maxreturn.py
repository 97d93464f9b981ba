"""Maximum-return provisioning: fees plus expected value of reserves.

    maximize    sum_i a_i x_i / (x_i + b_i) + c_i x_i
    subject to  x >= 0,  sum(x) = d

The objective is separable and concave.  For a budget multiplier ``nu``
each tick's stationarity condition ``a_i b_i / (x_i + b_i)^2 + c_i = nu``
has the closed form ``x_i(nu) = max(0, sqrt(a_i b_i / (nu - c_i)) - b_i)``,
so the solve reduces to a one-dimensional root find for the total demand
``sum x_i(nu) = d``.  The demand curve is convex and decreasing in ``nu``,
which lets Newton steps taken from the left of the root converge
monotonically; bisection guards every step.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    DEFAULT_EPSILON_B,
    Allocation,
    ConvergenceError,
    InfeasibleAllocationError,
    TickwiseError,
    ValidationError,
    check_vectors,
)

log = logging.getLogger(__name__)

SUM_TOL = 1e-10
MAX_ITER = 200
# scaled fees below this are treated as zero: their dual offsets would underflow
NEGLIGIBLE_FEE = 1e-200


@dataclass(frozen=True)
class DualBracket:
    nu_lo: float
    nu_hi: float
    iterations: int
    demand_gap: float


class SweepError(TickwiseError):
    """A capital-sweep solve failed; ``index`` points into ``d_list``."""

    def __init__(self, index: int, d: float, cause: Exception):
        super().__init__(f"sweep point {index} (d={d}) failed: {cause}")
        self.index = index
        self.d = d
        self.cause = cause


def objective_return(a, b, c, x) -> float:
    """Fees plus expected reserve value, ``sum(a x/(x+b) + c x)``."""
    a, b, c, x = (np.asarray(v, dtype=float) for v in (a, b, c, x))
    return float(np.sum(a * x / (x + b) + c * x))


def objective_standard_form(a, b, c, x) -> float:
    """The equivalent minimization objective ``sum(a b/(x+b) - c x - a)``.

    Equals ``-objective_return``.
    """
    a, b, c, x = (np.asarray(v, dtype=float) for v in (a, b, c, x))
    return float(np.sum(a * b / (x + b) - c * x - a))


class _Demand:
    """Capital demanded by the fee-earning ticks at multiplier ``ref + t``.

    The multiplier is carried as an offset ``t`` above ``ref = max c_i`` so
    that offsets far below the resolution of ``ref`` itself stay exact.
    """

    def __init__(self, a, b, c):
        self.w = np.sqrt(a * b)
        self.b = b
        self.ref = float(c.max())
        self.gap = self.ref - c

    def __call__(self, t: float) -> tuple[np.ndarray, float, float]:
        if t <= 0:
            return np.full(len(self.b), np.inf), np.inf, -np.inf
        u = self.gap + t
        root = self.w / np.sqrt(u)
        x = np.maximum(0.0, root - self.b)
        active = x > 0
        with np.errstate(over="ignore"):
            slope = -0.5 * float(np.sum(root[active] / u[active]))
        return x, float(np.sum(x)), slope


def solve_max_return(
    a,
    b,
    c,
    d: float,
    epsilon_b: float = DEFAULT_EPSILON_B,
    nu_hint: float | None = None,
    tol: float = SUM_TOL,
    max_iter: int = MAX_ITER,
) -> Allocation:
    """Solve the maximum-return problem by dual root finding.

    Args:
        a, b, c: Market conditions (forecast fees, existing liquidity value,
            expected per-unit reserve return).
        d: Capital.
        nu_hint: Known multiplier of a problem with smaller capital; used as
            an upper bracket (the optimal multiplier is non-increasing in d).
        tol: Budget tolerance, relative to ``max(d, 1)``.

    Returns:
        Allocation with ``dual`` set to the budget multiplier ``nu``.

    Raises:
        ConvergenceError: the budget gap is still above tolerance after
            ``max_iter`` iterations.
    """
    a, b, c, d = check_vectors(a, b, d, c, epsilon_b=epsilon_b)
    n = len(a)
    x = np.zeros(n)
    if n == 0:
        if d > 0:
            raise ValidationError("no ticks to allocate capital to", field="ticks")
        return Allocation(x, 0.0, 0.0, 0.0)
    if d == 0:
        with np.errstate(divide="ignore"):
            nu = float(np.max(a / b + c))
        return Allocation(x, nu, 0.0, 0.0)

    # work in units where the largest of a, b, d is 1; gradients are unchanged
    scale = max(d, float(a.max()), float(b.max()))
    a_s, b_s, d_s = a / scale, b / scale, d / scale
    gap_tol = tol * max(d, 1.0) / scale

    fee = a_s > NEGLIGIBLE_FEE
    linear = ~fee
    if not fee.any():
        nu = float(c.max())
        top = np.flatnonzero(c == nu)
        x[top] = d / len(top)
        return _finish(a, b, c, d, x, nu, 0)

    demand = _Demand(a_s[fee], b_s[fee], c[fee])
    ref = demand.ref
    lo, hi = 0.0, float(np.max(a_s[fee] / b_s[fee] - demand.gap))
    best_linear = float(c[linear].max()) if linear.any() else -np.inf

    if best_linear > ref:
        t_lin = best_linear - ref
        xf, total, _ = demand(t_lin)
        if total <= d_s:
            # linear ticks set the price of capital and absorb the remainder
            x[fee] = xf
            top = np.flatnonzero(linear & (c == best_linear))
            x[top] = (d_s - total) / len(top)
            return _finish(a, b, c, d, x * scale, best_linear, 0)
        lo = t_lin

    if nu_hint is not None and lo < nu_hint - ref < hi:
        t_hint = nu_hint - ref
        if demand(t_hint)[1] <= d_s:
            hi = t_hint
        else:
            lo = t_hint

    base = None  # last point left of the root with finite demand
    iterations = 0
    xf, t_x, gap = None, lo, np.inf
    while iterations < max_iter:
        iterations += 1
        if lo == 0:
            t = hi * 1e-4
        elif hi > 4 * lo:
            # far from the root Newton crawls (demand is a power law); bisect in log
            t = np.exp(0.5 * (np.log(lo) + np.log(hi)))
        else:
            t = 0.5 * (lo + hi)
            if base is not None and base[2] < 0:
                t_b, total_b, slope_b = base
                step = t_b + (total_b - d_s) / -slope_b
                if lo < step < hi:
                    t = step
        if not (lo < t < hi):
            break
        xf, total, slope = demand(t)
        t_x, gap = t, total - d_s
        if total >= d_s:
            lo = t
            base = (t, total, slope)
        else:
            hi = t
        if abs(gap) <= 1e-3 * gap_tol:
            break

    if xf is None or not abs(gap) <= gap_tol:
        if base is not None and abs(base[1] - d_s) <= gap_tol:
            t_x, total, _ = base
            xf, gap = demand(t_x)[0], total - d_s
        else:
            raise ConvergenceError(
                "dual root find did not reach the budget tolerance",
                bracket=DualBracket(ref + lo, ref + hi, iterations, float(gap) * scale),
            )

    xf = _polish(xf, d_s)
    x[fee] = xf
    return _finish(a, b, c, d, x * scale, ref + t_x, iterations)


def _polish(x: np.ndarray, d: float) -> np.ndarray:
    """Spread a round-off budget gap over the active ticks in proportion to size."""
    gap = d - float(np.sum(x))
    total = float(np.sum(x))
    if gap != 0 and total > 0:
        x = x + gap * (x / total)
    return np.maximum(x, 0.0)


def _finish(a, b, c, d, x, nu, iterations) -> Allocation:
    x = np.maximum(x, 0.0)
    residual = verify_kkt_return(a, b, c, d, x, tol=np.inf)
    return Allocation(x, float(nu), objective_return(a, b, c, x), residual, iterations=iterations)


def verify_kkt_return(a, b, c, d: float, x, tol: float = 1e-8,
                      epsilon_b: float = DEFAULT_EPSILON_B) -> float:
    """KKT residual of ``x`` for the maximum-return problem.

    With gradients ``g_i = a_i b_i / (x_i + b_i)^2 + c_i`` and
    ``nu = max`` over provisioned ticks, the residual is the worst of: any
    unprovisioned tick whose gradient exceeds ``nu``, the spread of
    gradients across provisioned ticks, and the feasibility gaps relative
    to ``max(d, 1)``.

    Raises:
        InfeasibleAllocationError: ``x`` is infeasible beyond ``tol``.
    """
    a, b, c, d = check_vectors(a, b, d, c, epsilon_b=epsilon_b)
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
    active = x > 0
    if not active.any():
        return max(neg_gap, sum_gap)
    grad = a * b / (x + b) ** 2 + c
    nu = float(grad[active].max())
    spread = nu - float(grad[active].min())
    excess = float(np.max(grad[~active] - nu, initial=0.0))
    return max(spread, max(excess, 0.0), neg_gap, sum_gap)


def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = total}`` (sort method)."""
    n = len(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    k = np.arange(1, n + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def projected_gradient_oracle(
    a,
    b,
    c,
    d: float,
    max_iters: int = 50_000,
    tol: float = 1e-14,
    epsilon_b: float = DEFAULT_EPSILON_B,
) -> Allocation:
    """Accelerated projected-gradient solve of the minimization form.

    Independent of :func:`solve_max_return`: works on
    ``sum(a b/(x+b) - c x - a)`` directly with a backtracked step,
    momentum with function-value restarts, and Euclidean projection onto
    the capital simplex.  Meant as a test oracle.

    Raises:
        ConvergenceError: ``max_iters`` reached; the best iterate is in
            ``details["best"]``.
    """
    a, b, c, d = check_vectors(a, b, d, c, epsilon_b=epsilon_b)
    n = len(a)
    if n == 0 or d == 0:
        return Allocation(np.zeros(n), float("nan"), 0.0, float("nan"), problem="oracle")
    scale = max(d, float(a.max()), float(b.max()))
    a_s, b_s, d_s = a / scale, b / scale, d / scale

    def f(z):
        return float(np.sum(a_s * b_s / (z + b_s) - c * z - a_s))

    def grad(z):
        return -a_s * b_s / (z + b_s) ** 2 - c

    x = np.full(n, d_s / n)
    fx = f(x)
    y, fy = x, fx
    t = 1.0
    lip = 1.0
    quiet = 0
    for it in range(1, max_iters + 1):
        g = grad(y)
        while True:
            z = project_simplex(y - g / lip, d_s)
            fz = f(z)
            step = z - y
            if fz <= fy + g @ step + 0.5 * lip * (step @ step) + 1e-15 * abs(fy):
                break
            lip *= 2.0
        if fz > fx:
            # momentum overshot: restart from the last accepted point
            y, fy, t = x, fx, 1.0
            quiet += 1
            if quiet >= 50:
                break
            continue
        improvement = fx - fz
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = project_simplex(z + ((t - 1.0) / t_next) * (z - x), d_s)
        fy = f(y)
        x, fx, t = z, fz, t_next
        lip *= 0.9
        quiet = quiet + 1 if improvement <= tol * max(1.0, abs(fx)) else 0
        if quiet >= 50:
            break
    else:
        it = max_iters + 1
    if it <= max_iters:
        return Allocation(x * scale, float("nan"), -fx * scale, float("nan"),
                          iterations=it, problem="oracle")
    best = Allocation(x * scale, float("nan"), -fx * scale, float("nan"),
                      status="iteration_limit", iterations=max_iters, problem="oracle")
    raise ConvergenceError("projected gradient hit its iteration budget", best=best)


def capital_sweep(
    a,
    b,
    c,
    d_list: Sequence[float],
    use_hint: bool = True,
    workers: int | None = None,
    epsilon_b: float = DEFAULT_EPSILON_B,
) -> list[Allocation]:
    """Solve the maximum-return problem for each capital level in ``d_list``.

    With ``use_hint`` (default) the solves run in order and each one is
    bracketed by the previous multiplier.  With ``use_hint=False`` the
    points are independent and ``workers`` threads may solve them in
    parallel.

    Raises:
        SweepError: a solve failed; carries the index into ``d_list``.
    """
    d_list = [float(v) for v in d_list]
    if any(v < 0 for v in d_list):
        raise ValidationError("capital values must be >= 0", field="d_list")
    if any(q < p for p, q in zip(d_list, d_list[1:])):
        raise ValidationError("d_list must be ascending", field="d_list")

    def one(k: int, hint: float | None) -> Allocation:
        try:
            return solve_max_return(a, b, c, d_list[k], epsilon_b=epsilon_b, nu_hint=hint)
        except TickwiseError as exc:
            raise SweepError(k, d_list[k], exc) from exc

    if not use_hint:
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(lambda k: one(k, None), range(len(d_list))))
        return [one(k, None) for k in range(len(d_list))]

    out: list[Allocation] = []
    hint = None
    for k in range(len(d_list)):
        alloc = one(k, hint)
        out.append(alloc)
        if d_list[k] > 0:
            hint = alloc.dual
    return out
