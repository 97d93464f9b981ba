import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tickwise import io
from tickwise.core import InsufficientDataError, TickSpec, ValidationError
from tickwise.reserves import expected_returns_for_ticks, price_mass_gbm
from tickwise.synthetic import candidate_ticks
from tickwise.volume import (
    AttributionError,
    SwapEvent,
    attribute_events,
    attribute_swap,
    consistency_check,
    fit_volume_shape,
    liquidity_from_value,
    predict_fees_a,
)

TWO = [TickSpec("lo", 1.0, 1.02, 0.003), TickSpec("hi", 1.02, 1.0404, 0.003)]


def swap(p0, p1, v=100.0, pool="pool", ts=0.0):
    return SwapEvent(ts, pool, p0, p1, v)


def test_swap_inside_one_tick():
    out = attribute_swap(swap(1.005, 1.01), TWO, [1.0, 1.0])
    assert out.tolist() == [100.0, 0.0]


def test_swap_across_two_ticks_hand_computed():
    out = attribute_swap(swap(1.0, 1.04), TWO, [1.0, 1.0])
    w = np.array([math.sqrt(1.02) - 1.0, math.sqrt(1.04) - math.sqrt(1.02)])
    assert out == pytest.approx(100.0 * w / w.sum(), rel=1e-14)
    assert math.fsum(out) == 100.0


def test_direction_does_not_matter():
    up = attribute_swap(swap(1.0, 1.04), TWO, [1.0, 3.0])
    down = attribute_swap(swap(1.04, 1.0), TWO, [1.0, 3.0])
    assert np.array_equal(up, down)


def test_degenerate_path_goes_to_containing_tick():
    assert attribute_swap(swap(1.03, 1.03), TWO, [1.0, 1.0]).tolist() == [0.0, 100.0]


def test_uncovered_path():
    with pytest.raises(AttributionError) as exc:
        attribute_swap(swap(1.0, 1.1), TWO, [1.0, 1.0])
    assert exc.value.uncovered is not None
    part = attribute_swap(swap(1.0, 1.1), TWO, [1.0, 1.0], partial=True)
    full = math.sqrt(1.1) - 1.0
    covered = math.sqrt(1.0404) - 1.0
    assert math.fsum(part) == pytest.approx(100.0 * covered / full)


def test_zero_liquidity_crossed():
    with pytest.raises(AttributionError):
        attribute_swap(swap(1.0, 1.04), TWO, [1.0, 0.0])


def test_mixed_pools_rejected():
    ticks = [TWO[0], TickSpec("x", 1.02, 1.03, 0.0005, "other")]
    with pytest.raises(ValidationError):
        attribute_swap(swap(1.0, 1.01), ticks, [1.0, 1.0])


def test_foreign_pools_ignored():
    profile = attribute_events([swap(1.0, 1.01), swap(1.0, 1.01, pool="other")], TWO, [1.0, 1.0])
    assert profile.total == 100.0 and profile.n_events == 1


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 1.0404), st.floats(1.0, 1.0404), st.floats(1e-6, 1e12),
       st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_conservation(p0, p1, volume, l0, l1):
    out = attribute_swap(swap(p0, p1, volume), TWO, [l0, l1], partial=True)
    if p0 != 1.0404 or p1 != 1.0404:
        assert math.fsum(out) == volume
    assert np.all(out >= 0)


def test_events_conserve_exactly():
    ticks = candidate_ticks(2780.0, 0.05, 10, 0.0005)
    rng = np.random.default_rng(3)
    prices = rng.uniform(2700.0, 2850.0, 200)
    events = [swap(p, q, float(v)) for p, q, v in zip(prices[:-1], prices[1:], rng.uniform(1, 1e6, 199))]
    liq = liquidity_from_value(ticks, np.full(len(ticks), 1e6), 2780.0)
    for ev in events:
        assert math.fsum(attribute_swap(ev, ticks, liq)) == ev.volume_stable


def test_fit_shape_examples():
    ticks = [TickSpec("a", 85.0, 95.0, 0.003), TickSpec("b", 105.0, 115.0, 0.003)]
    one = fit_volume_shape([swap(90.0, 90.0)], ticks, [1.0, 1.0])
    assert one.sigma_volume == 0.0 and one.total_per_period == 100.0
    two = fit_volume_shape([swap(90.0, 90.0), swap(110.0, 110.0)], ticks, [1.0, 1.0])
    assert two.sigma_volume == pytest.approx(10.0)


def test_fit_shape_recovers_generating_sigma(fixtures_dir):
    events = io.read_swaps(fixtures_dir / "gaussian_swaps.csv")
    assert len(events) == 1000
    ticks = candidate_ticks(2000.0, 0.10, 10, 0.0005)
    shape = fit_volume_shape(events, ticks, np.ones(len(ticks)))
    assert shape.sigma_volume == pytest.approx(25.0, rel=0.05)


def test_fit_shape_without_events():
    with pytest.raises(InsufficientDataError):
        fit_volume_shape([], TWO, [1.0, 1.0])
    with pytest.raises(InsufficientDataError):
        fit_volume_shape([swap(5.0, 5.0, pool="other")], TWO, [1.0, 1.0])


def test_single_tick_fee():
    t = TickSpec("t", 2770.0, 2790.0, 0.0005)
    assert predict_fees_a(2780.0, 10.0, 1e6, [t])[0] == pytest.approx(500.0, rel=1e-12)


def test_symmetric_ticks_equal_fees():
    ticks = [TickSpec("l", 2760.0, 2780.0, 0.0005), TickSpec("r", 2780.0, 2800.0, 0.0005)]
    a = predict_fees_a(2780.0, 15.0, 1e6, ticks, renormalize=False)
    assert a[0] == pytest.approx(a[1], rel=1e-12)


def test_fee_conservation_single_tier(fixtures_dir):
    events = io.read_swaps(fixtures_dir / "gaussian_swaps.csv")
    ticks = candidate_ticks(2000.0, 0.10, 10, 0.0005)
    sigma, total = fit_volume_shape(events, ticks, np.ones(len(ticks)))
    a = predict_fees_a(2000.0, sigma, total, ticks)
    assert math.fsum(a) == pytest.approx(0.0005 * total, rel=1e-9)


def test_per_pool_volumes():
    p1 = candidate_ticks(2780.0, 0.02, 10, 0.0005, "p1")
    p2 = candidate_ticks(2780.0, 0.02, 60, 0.003, "p2")
    a = predict_fees_a(2780.0, 20.0, {"p1": 1e6, "p2": 2e5}, p1 + p2)
    assert math.fsum(a[: len(p1)]) == pytest.approx(500.0, rel=1e-12)
    assert math.fsum(a[len(p1):]) == pytest.approx(600.0, rel=1e-12)


def test_zero_sigma_outside_ticks():
    with pytest.raises(ValidationError):
        predict_fees_a(5000.0, 0.0, 1e6, candidate_ticks(2780.0, 0.02, 10, 0.0005))


def _consistency_inputs(p_volume, p_mass, sigma_volume):
    ticks = candidate_ticks(2780.0, 0.10, 10, 0.0005)
    a = predict_fees_a(p_volume, sigma_volume, 1e9, ticks)
    mass = price_mass_gbm(p_mass, 0.8, 7)
    c, _ = expected_returns_for_ticks(ticks, p_mass, 0.8, 7)
    return a, c, ticks, mass


def price_sigma():
    return 0.8 * math.sqrt(7 / 365) * 2780.0


def test_consistent_models_have_no_flags():
    report = consistency_check(*_consistency_inputs(2780.0, 2780.0, price_sigma()))
    assert report.consistent and report.flags == ()


def test_center_offset_flag():
    report = consistency_check(*_consistency_inputs(2780.0, 1.1 * 2780.0, price_sigma()))
    assert "center_offset" in report.flags


def test_spread_ratio_flag(caplog):
    report = consistency_check(*_consistency_inputs(2780.0, 2780.0, price_sigma() / 10))
    assert report.flags == ("spread_ratio",)
    assert report.spread_ratio < 1 / 3
    assert "spread_ratio" in caplog.text
    assert report.to_dict()["flags"] == ["spread_ratio"]
