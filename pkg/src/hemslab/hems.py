"""Deterministic smart-home dispatch environment.

One step: the battery charges (q=-1), holds (0) or discharges (+1) at its
rated power, deferrable devices are switched on or kept waiting, and the
net power balance is settled at the step's sell price (surplus) or buy
price (deficit). State of charge stays inside [soc_min, soc_max] and no
deferred request may wait beyond its device's cap.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InfeasibleAction, UnknownDevice

# fraction of rated power above which a forecast slot counts as a request
REQUEST_THRESHOLD = 0.25

_SOC_EPS = 1e-9


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    rated_power_kw: float
    max_wait: int = 0                      # steps a request may be deferred
    request_slots: tuple[bool, ...] = ()   # per-step demand flags
    deferrable: bool = True

    def __post_init__(self):
        if self.rated_power_kw < 0 or self.max_wait < 0:
            raise ValueError("rated power and max_wait must be nonnegative")
        if not self.deferrable and self.max_wait != 0:
            raise ValueError("non-deferrable devices cannot wait")

    def arrivals(self) -> list[tuple[int, int]]:
        """(arrival_step, run_length) pairs; consecutive slots merge."""
        out = []
        t = 0
        slots = self.request_slots
        while t < len(slots):
            if slots[t]:
                start = t
                while t < len(slots) and slots[t]:
                    t += 1
                out.append((start, t - start))
            else:
                t += 1
        return out


@dataclass(frozen=True)
class HemsConfig:
    horizon: int
    price_buy: tuple[float, ...]           # currency / kWh, length horizon
    price_sell: tuple[float, ...]
    devices: tuple[DeviceSpec, ...] = ()
    ess_capacity_kwh: float = 16.0
    charge_power_kw: float = 4.0
    soc_min: float = 0.1
    soc_max: float = 0.9
    step_hours: float = 1.0
    initial_soc: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.soc_min < self.soc_max <= 1.0):
            raise ValueError("need 0 <= soc_min < soc_max <= 1")
        if self.ess_capacity_kwh <= 0 or self.charge_power_kw <= 0:
            raise ValueError("capacity and charge power must be positive")
        if len(self.price_buy) != self.horizon or len(self.price_sell) != self.horizon:
            raise ValueError("price schedules must have length == horizon")
        if not (self.soc_min <= self.initial_soc <= self.soc_max):
            raise ValueError("initial SOC outside bounds")
        if any(s > b for s, b in zip(self.price_sell, self.price_buy)):
            warnings.warn("sell price exceeds buy price in some steps", stacklevel=2)
        for d in self.devices:
            if d.request_slots and len(d.request_slots) != self.horizon:
                raise ValueError(f"device {d.name}: request_slots length != horizon")

    @property
    def soc_step(self) -> float:
        """SOC change magnitude of one full charge/discharge step."""
        return self.charge_power_kw * self.step_hours / self.ess_capacity_kwh

    def to_json(self) -> str:
        return json.dumps(
            {
                "horizon": self.horizon,
                "price_buy": list(self.price_buy),
                "price_sell": list(self.price_sell),
                "devices": [
                    {
                        "name": d.name,
                        "rated_power_kw": d.rated_power_kw,
                        "max_wait": d.max_wait,
                        "request_slots": [bool(s) for s in d.request_slots],
                        "deferrable": d.deferrable,
                    }
                    for d in self.devices
                ],
                "ess_capacity_kwh": self.ess_capacity_kwh,
                "charge_power_kw": self.charge_power_kw,
                "soc_min": self.soc_min,
                "soc_max": self.soc_max,
                "step_hours": self.step_hours,
                "initial_soc": self.initial_soc,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "HemsConfig":
        d = json.loads(text)
        devices = tuple(
            DeviceSpec(
                name=x["name"],
                rated_power_kw=x["rated_power_kw"],
                max_wait=x["max_wait"],
                request_slots=tuple(bool(s) for s in x["request_slots"]),
                deferrable=x["deferrable"],
            )
            for x in d["devices"]
        )
        return cls(
            horizon=d["horizon"],
            price_buy=tuple(d["price_buy"]),
            price_sell=tuple(d["price_sell"]),
            devices=devices,
            ess_capacity_kwh=d["ess_capacity_kwh"],
            charge_power_kw=d["charge_power_kw"],
            soc_min=d["soc_min"],
            soc_max=d["soc_max"],
            step_hours=d["step_hours"],
            initial_soc=d["initial_soc"],
        )


# per-device pending request queue entry: (remaining_slots, age)
PendingQueue = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class EnvState:
    t: int
    soc: float
    pending: tuple[PendingQueue, ...]  # one queue per device

    def key(self) -> tuple:
        return (self.t, round(self.soc, 12), self.pending)


@dataclass(frozen=True)
class DispatchAction:
    ess_command: int                   # -1 charge, 0 hold, +1 discharge
    device_on: tuple[int, ...] = ()    # 0/1 per device

    def __post_init__(self):
        if self.ess_command not in (-1, 0, 1):
            raise ValueError("ess_command must be -1, 0 or +1")


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    next_state: EnvState
    sell_indicator: int
    net_power_kw: float
    infeasible_flag: bool  # set when requests remain unserved at horizon end


def derive_device_requests(load_forecast_kw: dict[str, np.ndarray],
                           devices: list[DeviceSpec]) -> list[DeviceSpec]:
    """Mark request slots where a device's (forecast or actual) power is
    strictly above REQUEST_THRESHOLD of its rating."""
    out = []
    for dev in devices:
        if dev.name not in load_forecast_kw:
            raise UnknownDevice(f"no forecast channel for device {dev.name!r}")
        power = np.asarray(load_forecast_kw[dev.name], dtype=np.float64)
        slots = tuple(bool(v > REQUEST_THRESHOLD * dev.rated_power_kw) for v in power)
        out.append(replace(dev, request_slots=slots))
    return out


def initial_state(config: HemsConfig) -> EnvState:
    pending = tuple(
        tuple((length, 0) for (arr, length) in dev.arrivals() if arr == 0)
        for dev in config.devices
    )
    return EnvState(t=0, soc=config.initial_soc, pending=pending)


def _soc_after(config: HemsConfig, soc: float, q: int) -> float:
    # q=+1 discharges: positive battery power supplies the home and SOC drops
    return soc - q * config.soc_step


def action_feasible(config: HemsConfig, state: EnvState, action: DispatchAction) -> str | None:
    """None if feasible, else a reason string."""
    if len(action.device_on) != len(config.devices):
        return "device_on length mismatch"
    nxt = _soc_after(config, state.soc, action.ess_command)
    if nxt < config.soc_min - _SOC_EPS or nxt > config.soc_max + _SOC_EPS:
        return f"SOC bound violated ({nxt:.4f})"
    for l, dev in enumerate(config.devices):
        queue = state.pending[l]
        if action.device_on[l]:
            if not queue:
                return f"device {dev.name} switched on with no pending request"
            # serving freezes the head's age; everything behind it still waits
            if any(age >= dev.max_wait for _, age in queue[1:]):
                return f"device {dev.name} has an overdue queued request"
        else:
            if any(age >= dev.max_wait for _, age in queue):
                return f"device {dev.name} request overdue"
    return None


def enumerate_actions(config: HemsConfig, state: EnvState,
                      pv_kw: float = 0.0, base_load_kw: float = 0.0) -> list[DispatchAction]:
    """Feasible subset of {-1,0,+1} x {0,1}^D in canonical order
    (q ascending, then device bits read as a binary number)."""
    D = len(config.devices)
    out = []
    for q in (-1, 0, 1):
        for bits in itertools.product((0, 1), repeat=D):
            action = DispatchAction(q, bits)
            if action_feasible(config, state, action) is None:
                out.append(action)
    return out


def action_index(config: HemsConfig, action: DispatchAction) -> int:
    """Stable position of an action in the full canonical product."""
    D = len(config.devices)
    bits = 0
    for g in action.device_on:
        bits = (bits << 1) | int(g)
    return (action.ess_command + 1) * (1 << D) + bits


def num_action_slots(config: HemsConfig) -> int:
    return 3 * (1 << len(config.devices))


def step(config: HemsConfig, state: EnvState, action: DispatchAction,
         pv_kw: float, base_load_kw: float) -> StepOutcome:
    """Advance one step; raises InfeasibleAction on any constraint breach."""
    reason = action_feasible(config, state, action)
    if reason is not None:
        raise InfeasibleAction(f"t={state.t}: {reason}")
    if pv_kw < 0 or base_load_kw < 0:
        raise ValueError("pv and base load must be nonnegative")

    p_ess = config.charge_power_kw * action.ess_command
    soc_next = _soc_after(config, state.soc, action.ess_command)
    soc_next = min(max(soc_next, config.soc_min), config.soc_max)

    device_load = sum(
        dev.rated_power_kw
        for l, dev in enumerate(config.devices)
        if action.device_on[l]
    )
    net = p_ess + pv_kw - (base_load_kw + device_load)
    alpha = 1 if net > 0 else 0
    price = config.price_sell[state.t] if alpha else config.price_buy[state.t]
    reward = net * config.step_hours * price

    # queue update: serve one slot of the head request, age the rest
    new_pending = []
    for l, dev in enumerate(config.devices):
        queue = list(state.pending[l])
        if action.device_on[l]:
            remaining, age = queue[0]
            queue = ([(remaining - 1, age)] if remaining > 1 else []) + [
                (r, a + 1) for r, a in queue[1:]
            ]
        else:
            queue = [(r, a + 1) for r, a in queue]
        new_pending.append(tuple(queue))

    t_next = state.t + 1
    unserved = False
    if t_next < config.horizon:
        for l, dev in enumerate(config.devices):
            for arr, length in dev.arrivals():
                if arr == t_next:
                    new_pending[l] = new_pending[l] + ((length, 0),)
    else:
        unserved = any(q for q in new_pending)

    next_state = EnvState(t=t_next, soc=soc_next, pending=tuple(new_pending))
    return StepOutcome(
        reward=reward,
        next_state=next_state,
        sell_indicator=alpha,
        net_power_kw=net,
        infeasible_flag=unserved,
    )


def rollout(config: HemsConfig, policy, pv_kw: np.ndarray,
            base_load_kw: np.ndarray) -> tuple[float, list[StepOutcome]]:
    """Run `policy(state) -> DispatchAction` over the whole horizon."""
    pv = np.asarray(pv_kw, dtype=np.float64)
    load = np.asarray(base_load_kw, dtype=np.float64)
    if len(pv) != config.horizon or len(load) != config.horizon:
        raise ValueError("trajectories must have length == horizon")
    state = initial_state(config)
    trace: list[StepOutcome] = []
    total = 0.0
    for t in range(config.horizon):
        action = policy(state)
        try:
            outcome = step(config, state, action, float(pv[t]), float(load[t]))
        except InfeasibleAction as exc:
            raise InfeasibleAction(f"rollout failed at step {t}: {exc}") from exc
        trace.append(outcome)
        total += outcome.reward
        state = outcome.next_state
    return total, trace


def write_trace_csv(config: HemsConfig, trace: list[StepOutcome],
                    actions: list[DispatchAction], path: str | Path) -> None:
    device_cols = ",".join(f"g_{d.name}" for d in config.devices)
    header = "t,soc,q" + ("," + device_cols if device_cols else "") + ",net_kw,alpha,reward"
    lines = [header]
    soc = config.initial_soc
    for t, (outcome, action) in enumerate(zip(trace, actions)):
        gcols = "".join(f",{g}" for g in action.device_on)
        lines.append(
            f"{t},{soc:.12g},{action.ess_command}{gcols},"
            f"{outcome.net_power_kw:.12g},{outcome.sell_indicator},{outcome.reward:.12g}"
        )
        soc = outcome.next_state.soc
    Path(path).write_text("\n".join(lines) + "\n")
