"""Bridging forecasts to dispatch: hourly day profiles, device request
derivation and environment configs for the operation-level evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hems
from .data import NormalizationParams, SeriesFrame, normalize_values
from .hems import DeviceSpec, HemsConfig

HOURS_PER_DAY = 24

# default peak / off-peak tariff (currency per kWh); sell = half of buy
PEAK_BUY = 0.20
OFFPEAK_BUY = 0.10
PEAK_HOURS = range(7, 22)

DEFAULT_DEVICES = (
    DeviceSpec("dishwasher", rated_power_kw=1.8, max_wait=2),
    DeviceSpec("washing_machine", rated_power_kw=1.5, max_wait=3),
)


def price_schedule(horizon: int = HOURS_PER_DAY) -> tuple[tuple[float, ...], tuple[float, ...]]:
    buy = tuple(PEAK_BUY if h % 24 in PEAK_HOURS else OFFPEAK_BUY for h in range(horizon))
    sell = tuple(0.5 * b for b in buy)
    return buy, sell


@dataclass(frozen=True)
class DayProfile:
    """Hourly kW trajectories for one day, per channel."""

    channel_names: tuple[str, ...]
    hourly_kw: np.ndarray  # [24, C]

    def channel(self, name: str) -> np.ndarray:
        return self.hourly_kw[:, self.channel_names.index(name)]

    def pv_kw(self, pv_channel: str = "pv") -> np.ndarray:
        return np.clip(self.channel(pv_channel), 0.0, None)

    def base_load_kw(self, total_channel: str, deferrable: tuple[str, ...]) -> np.ndarray:
        base = self.channel(total_channel).copy()
        for name in deferrable:
            base -= self.channel(name)
        return np.clip(base, 0.0, None)


def hourly_profile_from_values(values_w: np.ndarray, channel_names,
                               steps_per_hour: int) -> DayProfile:
    """Aggregate watt-scale rows of one day into hourly kW means."""
    values_w = np.asarray(values_w, dtype=np.float64)
    need = HOURS_PER_DAY * steps_per_hour
    if values_w.shape[0] != need:
        raise ValueError(f"expected {need} rows for one day, got {values_w.shape[0]}")
    hourly = values_w.reshape(HOURS_PER_DAY, steps_per_hour, -1).mean(axis=1) / 1000.0
    return DayProfile(tuple(channel_names), hourly)


def actual_day_profile(frame: SeriesFrame, day_start_index: int) -> DayProfile:
    """Hourly profile of the day starting at the given frame row."""
    steps_per_hour = 3600 // frame.period
    rows = frame.values[day_start_index : day_start_index + HOURS_PER_DAY * steps_per_hour]
    return hourly_profile_from_values(rows, frame.channel_names, steps_per_hour)


def forecast_day_profile(predict_fn, frame: SeriesFrame, norm: NormalizationParams,
                         day_start_index: int, history_len: int,
                         horizon_len: int) -> DayProfile:
    """Roll a forecaster over one day: each hour is predicted from the true
    history window ending at that hour, then averaged to an hourly mean.

    predict_fn(windows [B, n, C] normalized, day_of_week [B]) -> watts [B, m, C]
    """
    steps_per_hour = 3600 // frame.period
    if horizon_len < steps_per_hour:
        raise ValueError("forecast horizon shorter than one hour")
    if day_start_index < history_len:
        raise ValueError("not enough history before the requested day")
    from .data import day_of_week

    starts = [day_start_index + h * steps_per_hour for h in range(HOURS_PER_DAY)]
    windows = np.stack(
        [normalize_values(frame.values[s - history_len : s], norm) for s in starts]
    )
    dows = np.array([day_of_week(frame.timestamps[s]) for s in starts])
    preds = predict_fn(windows, dows)  # [24, m, C] watts
    hourly = preds[:, :steps_per_hour, :].mean(axis=1) / 1000.0
    return DayProfile(tuple(frame.channel_names), hourly)


def build_env_config(profile: DayProfile, devices: tuple[DeviceSpec, ...] = DEFAULT_DEVICES,
                     total_channel: str = "total", **overrides) -> HemsConfig:
    """Environment for one day driven by the given (forecast or actual)
    profile; device requests are thresholded from the profile itself."""
    loads = {dev.name: profile.channel(dev.name) for dev in devices}
    devs = tuple(hems.derive_device_requests(loads, list(devices)))
    buy, sell = price_schedule(HOURS_PER_DAY)
    kwargs = dict(
        horizon=HOURS_PER_DAY,
        price_buy=buy,
        price_sell=sell,
        devices=devs,
    )
    kwargs.update(overrides)
    return HemsConfig(**kwargs)


def trajectories(profile: DayProfile, devices: tuple[DeviceSpec, ...] = DEFAULT_DEVICES,
                 total_channel: str = "total") -> tuple[np.ndarray, np.ndarray]:
    """(pv_kw, base_load_kw) arrays for the environment rollout."""
    deferrable = tuple(dev.name for dev in devices)
    return profile.pv_kw(), profile.base_load_kw(total_channel, deferrable)
