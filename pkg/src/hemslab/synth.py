"""Seeded synthetic household corpus: appliance duty cycles with
day-of-week structure plus a diurnal PV curve, at 10-minute resolution.

The whole test and acceptance suite runs on this generator, so no external
dataset is required.
"""

from __future__ import annotations

import numpy as np

from .data import ChannelDesc, SeriesFrame

STEPS_PER_DAY = 144  # 10-minute resolution
PERIOD_S = 600

CHANNELS = (
    ChannelDesc("hifi_router", kind="load"),
    ChannelDesc("dishwasher", kind="load"),
    ChannelDesc("pv", kind="pv"),
    ChannelDesc("tumble_dryer", kind="load"),
    ChannelDesc("washing_machine", kind="load"),
    ChannelDesc("total", kind="total"),
)

# watts
DISHWASHER_W = 1800.0
WASHER_W = 1500.0
DRYER_W = 2200.0
PV_PEAK_W = 3000.0

START_EPOCH = 1483228800  # 2017-01-01T00:00:00Z, a Sunday


def generate(num_days: int, seed: int = 0, start_epoch: int = START_EPOCH) -> SeriesFrame:
    rng = np.random.default_rng(seed)
    n = num_days * STEPS_PER_DAY
    ts = start_epoch + PERIOD_S * np.arange(n, dtype=np.int64)
    step_of_day = np.arange(n) % STEPS_PER_DAY
    day = np.arange(n) // STEPS_PER_DAY
    dow = ((ts // 86400) + 4) % 7  # Monday=0 (1970-01-01 was a Thursday)

    hifi = 30.0 + 20.0 * _bump(step_of_day, 108, 138) + rng.normal(0, 3.0, n)
    hifi = np.clip(hifi, 0, None)

    dish = np.zeros(n)
    wash = np.zeros(n)
    dryer = np.zeros(n)
    for d in range(num_days):
        base = d * STEPS_PER_DAY
        d_dow = int(dow[base])
        # dishwasher after dinner most days
        if rng.random() < 0.85:
            start = base + 117 + int(rng.integers(-2, 3))  # ~19:30
            _run(dish, start, 9, DISHWASHER_W, n)
        # laundry on Mon/Wed/Sat mornings, dryer follows an hour later
        if d_dow in (0, 2, 5) and rng.random() < 0.9:
            start = base + 48 + int(rng.integers(-2, 3))  # ~08:00
            _run(wash, start, 6, WASHER_W, n)
            _run(dryer, start + 12, 5, DRYER_W, n)

    # PV: clear-sky bell between 06:00 and 20:00 with slow weather factor
    hours = step_of_day / 6.0
    bell = np.clip(np.sin(np.pi * (hours - 6.0) / 14.0), 0.0, None) ** 1.5
    bell[(hours < 6.0) | (hours > 20.0)] = 0.0
    season = 1.0 + 0.3 * np.sin(2 * np.pi * day / 365.0)
    weather_daily = np.clip(rng.beta(4, 2, num_days), 0.2, 1.0)
    weather = np.repeat(weather_daily, STEPS_PER_DAY)
    pv = PV_PEAK_W * bell * season * weather + rng.normal(0, 20.0, n)
    pv = np.clip(pv, 0, None)

    base_load = (
        280.0
        + 350.0 * _bump(step_of_day, 42, 54)     # morning
        + 500.0 * _bump(step_of_day, 105, 132)   # evening
        + np.clip(rng.normal(0, 40.0, n), -120, 400)
    )
    base_load = np.clip(base_load, 0, None)
    total = hifi + dish + wash + dryer + base_load

    values = np.column_stack([hifi, dish, pv, dryer, wash, total])
    return SeriesFrame(CHANNELS, ts, values, np.zeros_like(values, dtype=bool))


def _bump(step_of_day: np.ndarray, lo: int, hi: int) -> np.ndarray:
    return ((step_of_day >= lo) & (step_of_day < hi)).astype(np.float64)


def _run(arr: np.ndarray, start: int, length: int, power: float, n: int) -> None:
    arr[max(start, 0) : min(start + length, n)] += power
