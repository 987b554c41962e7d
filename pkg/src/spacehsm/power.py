"""Day/eclipse energy budget for a single HSM payload."""

from __future__ import annotations

from dataclasses import dataclass, replace

from pydantic import BaseModel, ConfigDict, Field

from .errors import BrownoutError

SECONDS_PER_HOUR = 3600.0


class PowerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    solar_input_w: float = Field(3.82, ge=0)
    obc_w: float = Field(0.2, ge=0)
    tx_w: float = Field(1.7, ge=0)
    rx_w: float = Field(0.2, ge=0)
    tx_duty: float = Field(0.30, ge=0, le=1)
    recharge_w: float = Field(0.85, ge=0)
    battery_wh: float = Field(10.0, gt=0)
    daylight_s: float = Field(2700.0, ge=0)
    eclipse_s: float = Field(2700.0, ge=0)

    @property
    def orbit_period_s(self) -> float:
        return self.daylight_s + self.eclipse_s


@dataclass(frozen=True)
class BatteryState:
    charge_wh: float
    min_charge_wh: float

    @classmethod
    def full(cls, config: PowerConfig) -> "BatteryState":
        return cls(config.battery_wh, config.battery_wh)


def transceiver_average(config: PowerConfig) -> float:
    return config.tx_duty * config.tx_w + (1 - config.tx_duty) * config.rx_w


def eclipse_draw(config: PowerConfig) -> float:
    """Night load: computer plus transceiver, recharging excluded."""
    return config.obc_w + transceiver_average(config)


def average_consumption(config: PowerConfig) -> float:
    return config.obc_w + transceiver_average(config) + config.recharge_w


def step(state: BatteryState, config: PowerConfig, dt: float, daylight: bool) -> BatteryState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    hours = dt / SECONDS_PER_HOUR
    if daylight:
        charge = min(config.battery_wh, state.charge_wh + config.recharge_w * hours)
    else:
        charge = state.charge_wh - eclipse_draw(config) * hours
        if charge < 0:
            raise BrownoutError(f"battery exhausted ({charge:.4f} Wh)")
    return replace(state, charge_wh=charge, min_charge_wh=min(state.min_charge_wh, charge))


def depth_of_discharge(state: BatteryState, config: PowerConfig) -> float:
    """Deepest discharge seen so far, in percent of capacity."""
    return 100.0 * (config.battery_wh - state.min_charge_wh) / config.battery_wh


def simulate_orbits(config: PowerConfig, orbits: int,
                    state: BatteryState | None = None) -> tuple[BatteryState, list[dict]]:
    """Daylight then eclipse, once per orbit; returns per-orbit telemetry rows."""
    state = state or BatteryState.full(config)
    rows = []
    for k in range(orbits):
        orbit_min = state.charge_wh
        for dt, day in ((config.daylight_s, True), (config.eclipse_s, False)):
            if dt > 0:
                state = step(state, config, dt, day)
                orbit_min = min(orbit_min, state.charge_wh)
        rows.append({
            "orbit": k,
            "min_charge_wh": orbit_min,
            "dod_percent": 100.0 * (config.battery_wh - orbit_min) / config.battery_wh,
        })
    return state, rows
