import pytest
from hypothesis import given, settings, strategies as st

from spacehsm.errors import BrownoutError
from spacehsm.power import (
    BatteryState, PowerConfig, average_consumption, depth_of_discharge, eclipse_draw, simulate_orbits,
    step, transceiver_average,
)

CFG = PowerConfig()


def test_transceiver_average_is_065_w():
    assert transceiver_average(CFG) == pytest.approx(0.3 * 1.7 + 0.7 * 0.2)
    assert transceiver_average(CFG) == pytest.approx(0.65)


def test_daylight_consumption_is_170_w_and_445_percent():
    assert average_consumption(CFG) == pytest.approx(1.70, abs=1e-12)
    assert average_consumption(CFG) / CFG.solar_input_w == pytest.approx(0.445, abs=5e-4)


def test_one_eclipse_draws_064_wh():
    s = step(BatteryState.full(CFG), CFG, CFG.eclipse_s, daylight=False)
    drawn = CFG.battery_wh - s.charge_wh
    assert drawn == pytest.approx(0.6375, rel=1e-12)
    assert drawn == pytest.approx(0.64, rel=0.01)
    assert eclipse_draw(CFG) == pytest.approx(0.85)


def test_daylight_recharges_and_clamps():
    s = BatteryState(9.5, 9.5)
    s = step(s, CFG, 3600, daylight=True)
    assert s.charge_wh == CFG.battery_wh
    s = step(BatteryState(5.0, 5.0), CFG, 3600, daylight=True)
    assert s.charge_wh == pytest.approx(5.85)


def test_fifty_orbits_dod():
    state, rows = simulate_orbits(CFG, 50)
    assert len(rows) == 50
    assert depth_of_discharge(state, CFG) == pytest.approx(6.375, abs=0.1)
    assert max(r["dod_percent"] for r in rows) < 10.0


def test_one_second_steps_agree_with_closed_form():
    # Independent bookkeeping: 2700 one-second eclipse steps, then daylight.
    s = BatteryState.full(CFG)
    for _ in range(2700):
        s = step(s, CFG, 1.0, daylight=False)
    assert s.charge_wh == pytest.approx(10.0 - 0.85 * 0.75, abs=1e-9)
    for _ in range(2700):
        s = step(s, CFG, 1.0, daylight=True)
    assert s.charge_wh == pytest.approx(10.0)
    assert depth_of_discharge(s, CFG) == pytest.approx(6.375)


def test_brownout_and_bad_dt():
    with pytest.raises(BrownoutError):
        step(BatteryState(0.1, 0.1), CFG, 3600, daylight=False)
    with pytest.raises(ValueError):
        step(BatteryState.full(CFG), CFG, 0, daylight=True)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(1, 3000), st.booleans()), max_size=30))
def test_charge_stays_within_bounds(steps):
    s = BatteryState.full(CFG)
    for dt, day in steps:
        try:
            s = step(s, CFG, dt, day)
        except BrownoutError:
            break
        assert 0 <= s.charge_wh <= CFG.battery_wh
        assert s.min_charge_wh <= s.charge_wh
