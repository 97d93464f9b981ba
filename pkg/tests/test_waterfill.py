import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tickwise.core import DegenerateObjectiveError, InfeasibleAllocationError
from tickwise.maxreturn import projected_gradient_oracle
from tickwise.waterfill import (
    objective_revenue,
    solve_waterfill,
    verify_kkt_revenue,
    water_volume,
    waterfill_breakpoints,
)

from conftest import random_instance


def test_symmetric_split():
    alloc = solve_waterfill([1.0, 1.0], [1.0, 1.0], 2.0)
    assert np.allclose(alloc.x, [1.0, 1.0], atol=1e-14)
    assert alloc.dual == pytest.approx(2.0, abs=1e-14)
    assert alloc.problem == "max_revenue"


def test_corner_instance_matches_grid_search():
    alloc = solve_waterfill([4.0, 1.0], [1.0, 1.0], 1.0)
    assert np.allclose(alloc.x, [1.0, 0.0], atol=1e-14)
    assert alloc.dual == pytest.approx(1.0, abs=1e-14)
    grid = np.arange(0, 1 + 1e-12, 1e-4)
    best = max(objective_revenue([4.0, 1.0], [1.0, 1.0], [g, 1 - g]) for g in grid)
    assert alloc.objective >= best - 1e-12


def test_zero_capital():
    alloc = solve_waterfill([1.0, 1.0], [1.0, 1.0], 0.0)
    assert alloc.x.tolist() == [0.0, 0.0]
    assert verify_kkt_revenue([1.0, 1.0], [1.0, 1.0], 0.0, [0.0, 0.0]) == 0.0


def test_breakpoints():
    bps = waterfill_breakpoints([4.0, 1.0, 0.0], [1.0, 1.0, 1.0])
    assert [bp.height for bp in bps[:2]] == [0.5, 1.0]
    assert [bp.width for bp in bps[:2]] == [2.0, 1.0]
    assert len(bps) == 2  # zero-fee ticks never flood


def test_water_volume_is_capital_at_level():
    a, b = np.array([4.0, 1.0, 2.0]), np.array([1.0, 3.0, 0.5])
    alloc = solve_waterfill(a, b, 3.0)
    assert water_volume(alloc.dual, a, b) == pytest.approx(3.0, rel=1e-13)


def test_kkt_flags_suboptimal_point():
    assert verify_kkt_revenue([4.0, 1.0], [1.0, 1.0], 1.0, [0.0, 1.0]) > 0.1


def test_kkt_infeasible_budget():
    with pytest.raises(InfeasibleAllocationError):
        verify_kkt_revenue([1.0, 1.0], [1.0, 1.0], 2.0, [1.0, 0.5])


def test_all_zero_fees_with_capital_is_degenerate():
    with pytest.raises(DegenerateObjectiveError):
        solve_waterfill([0.0, 0.0], [1.0, 1.0], 1.0)


def test_zero_fee_ticks_get_nothing():
    alloc = solve_waterfill([0.0, 2.0, 0.0], [1.0, 1.0, 1.0], 5.0)
    assert alloc.x[0] == 0.0 and alloc.x[2] == 0.0
    assert alloc.x[1] == pytest.approx(5.0)


def test_against_oracle(rng):
    for _ in range(30):
        a, b, _, d = random_instance(rng)
        alloc = solve_waterfill(a, b, d)
        oracle = projected_gradient_oracle(a, b, np.zeros_like(a), d)
        f_or = objective_revenue(a, b, oracle.x)
        assert alloc.objective >= f_or - 1e-9 * abs(f_or)
        assert verify_kkt_revenue(a, b, d, alloc.x) <= 1e-10


def test_brute_force_three_ticks():
    a, b, d = np.array([3.0, 1.0, 0.5]), np.array([0.5, 0.2, 2.0]), 1.5
    alloc = solve_waterfill(a, b, d)
    step = d / 300
    best = -np.inf
    for i, j in itertools.product(range(301), repeat=2):
        if i + j <= 300:
            x = np.array([i, j, 300 - i - j]) * step
            best = max(best, objective_revenue(a, b, x))
    assert alloc.objective >= best - 1e-12


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3)), min_size=1, max_size=12),
    st.floats(0.0, 1e3),
)
def test_invariants(pairs, d):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    alloc = solve_waterfill(a, b, d)
    assert np.all(alloc.x >= 0)
    assert abs(alloc.x.sum() - d) <= 1e-10 * max(d, 1)
    assert verify_kkt_revenue(a, b, d, alloc.x) <= 1e-10
    # ticks with lower breakpoints are flooded first
    h = np.sqrt(b / a)
    active = alloc.x > 0
    if active.any() and (~active).any():
        assert h[active].max() <= h[~active].min() * (1 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(1.01, 3.0))
def test_more_capital_never_shrinks_allocation(d, factor):
    a, b = np.array([4.0, 1.0, 2.0, 0.3]), np.array([1.0, 1.0, 0.2, 0.05])
    lo, hi = solve_waterfill(a, b, d), solve_waterfill(a, b, d * factor)
    assert np.all(hi.x >= lo.x - 1e-12 * d * factor)
