"""Tick-by-tick liquidity provisioning for concentrated-liquidity AMMs."""

from .backtest import (
    BacktestResult,
    MarketData,
    PeriodResult,
    ResultTable,
    Snapshot,
    Window,
    make_windows,
    rolling_backtest,
    run_period,
    strategy_delta_neutral,
    strategy_tick_by_tick,
    strategy_uniform_range,
)
from .config import RunConfig
from .core import (
    Allocation,
    ConvergenceError,
    DegenerateObjectiveError,
    InfeasibleAllocationError,
    InsufficientDataError,
    MarketConditions,
    TickSpec,
    TickwiseError,
    ValidationError,
    validate_conditions,
)
from .maxreturn import capital_sweep, projected_gradient_oracle, solve_max_return, verify_kkt_return
from .reserves import PriceMass, ReserveCurve, expected_return_c, price_mass_gbm, reserve_value_curve
from .volume import (
    AttributionError,
    SwapEvent,
    attribute_swap,
    consistency_check,
    fit_volume_shape,
    predict_fees_a,
)
from .waterfill import solve_waterfill, verify_kkt_revenue

__version__ = "0.1.0"
