"""Tabular epsilon-greedy Q-learning over the dispatch environment.

Training runs on forecast trajectories (offline); evaluation replays the
frozen greedy policy on actual trajectories (online). The gap between the
two profits measures forecast quality at the operation level.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hems
from .errors import NoFeasibleAction
from .hems import DispatchAction, EnvState, HemsConfig


@dataclass(frozen=True)
class QLearnConfig:
    episodes: int = 7000
    discount: float = 0.99
    learning_rate: float = 0.95
    epsilon_initial: float = 0.1
    epsilon_decay: float = 0.999    # multiplicative per episode
    epsilon_floor: float = 0.01
    soc_bins: int = 17
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must be in (0, 1]")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning rate must be in (0, 1]")
        if not (0.0 <= self.epsilon_initial <= 1.0):
            raise ValueError("epsilon must be in [0, 1]")


# state key: (t, soc_bin, per-device head-request age; -1 when idle)
QKey = tuple[int, int, tuple[int, ...]]


class QTable:
    """Discretized state -> action-value vector, plus visit counts.

    Action vectors span the full canonical action product so indices are
    stable across states; unseen entries read as zero.
    """

    def __init__(self, num_actions: int):
        self.num_actions = num_actions
        self.values: dict[QKey, np.ndarray] = {}
        self.visits: dict[QKey, np.ndarray] = {}

    def row(self, key: QKey) -> np.ndarray:
        if key not in self.values:
            self.values[key] = np.zeros(self.num_actions)
            self.visits[key] = np.zeros(self.num_actions, dtype=np.int64)
        return self.values[key]

    def get(self, key: QKey, action_idx: int) -> float:
        row = self.values.get(key)
        return float(row[action_idx]) if row is not None else 0.0

    def max_over(self, key: QKey, action_indices: list[int]) -> float:
        row = self.values.get(key)
        if row is None:
            return 0.0
        return float(max(row[i] for i in action_indices))

    @property
    def num_states(self) -> int:
        return len(self.values)

    def summary(self) -> dict:
        all_vals = np.concatenate(list(self.values.values())) if self.values else np.zeros(1)
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "value_min": float(all_vals.min()),
            "value_max": float(all_vals.max()),
            "total_visits": int(sum(v.sum() for v in self.visits.values())),
        }

    # binary layout: magic, u32 num_actions, u32 num_states, then per state:
    # u32 t, u32 soc_bin, u16 n_devices, i32 ages..., f8 values, i64 visits
    MAGIC = b"HLQT0001"

    def save(self, path: str | Path) -> None:
        with Path(path).open("wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<II", self.num_actions, self.num_states))
            for key in sorted(self.values):
                t, soc_bin, ages = key
                fh.write(struct.pack("<IIH", t, soc_bin, len(ages)))
                for a in ages:
                    fh.write(struct.pack("<i", a))
                fh.write(np.ascontiguousarray(self.values[key], dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(self.visits[key], dtype="<i8").tobytes())
        Path(str(path) + ".json").write_text(json.dumps(self.summary(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "QTable":
        data = Path(path).read_bytes()
        if data[:8] != cls.MAGIC:
            raise ValueError("bad Q-table magic")
        num_actions, num_states = struct.unpack_from("<II", data, 8)
        table = cls(num_actions)
        off = 16
        for _ in range(num_states):
            t, soc_bin, nd = struct.unpack_from("<IIH", data, off)
            off += 10
            ages = struct.unpack_from(f"<{nd}i", data, off) if nd else ()
            off += 4 * nd
            vals = np.frombuffer(data, dtype="<f8", count=num_actions, offset=off).copy()
            off += 8 * num_actions
            vis = np.frombuffer(data, dtype="<i8", count=num_actions, offset=off).copy()
            off += 8 * num_actions
            key = (t, soc_bin, tuple(ages))
            table.values[key] = vals
            table.visits[key] = vis
        return table


def discretize(state: EnvState, env_config: HemsConfig, config: QLearnConfig) -> QKey:
    """Uniform SOC binning over [soc_min, soc_max]; head-request age per
    device clamped at max_wait, -1 when no request is pending."""
    span = env_config.soc_max - env_config.soc_min
    frac = (state.soc - env_config.soc_min) / span
    soc_bin = min(int(frac * config.soc_bins), config.soc_bins - 1)
    soc_bin = max(soc_bin, 0)
    ages = tuple(
        min(queue[0][1], dev.max_wait) if queue else -1
        for queue, dev in zip(state.pending, env_config.devices)
    )
    return (state.t, soc_bin, ages)


def select_action(table: QTable, key: QKey, feasible: list[DispatchAction],
                  env_config: HemsConfig, epsilon: float,
                  rng: np.random.Generator) -> DispatchAction:
    """Epsilon-greedy over the feasible actions; greedy ties break toward
    the lowest canonical action index."""
    if not feasible:
        raise NoFeasibleAction(f"no feasible action in state key {key}")
    if epsilon > 0 and rng.random() < epsilon:
        return feasible[rng.integers(len(feasible))]
    best = feasible[0]
    best_q = table.get(key, hems.action_index(env_config, best))
    for action in feasible[1:]:
        q = table.get(key, hems.action_index(env_config, action))
        if q > best_q:
            best, best_q = action, q
    return best


def q_update(table: QTable, key: QKey, action_idx: int, reward: float,
             next_key: QKey | None, next_feasible_indices: list[int],
             lr: float, discount: float) -> float:
    """Q <- (1-lr) Q + lr (r + gamma max_a' Q(s', a')); terminal max is 0."""
    future = 0.0
    if next_key is not None and next_feasible_indices:
        future = table.max_over(next_key, next_feasible_indices)
    row = table.row(key)
    row[action_idx] = (1.0 - lr) * row[action_idx] + lr * (reward + discount * future)
    table.visits[key][action_idx] += 1
    return float(row[action_idx])


def train_offline(config: QLearnConfig, env_config: HemsConfig,
                  forecast_pv_kw: np.ndarray, forecast_load_kw: np.ndarray
                  ) -> tuple[QTable, float, list[float]]:
    """Episodes of full-horizon epsilon-greedy rollouts on the forecast
    trajectories.

    Returns (table, greedy profit on the forecasts, per-episode returns).
    """
    pv = np.asarray(forecast_pv_kw, dtype=np.float64)
    load = np.asarray(forecast_load_kw, dtype=np.float64)
    if len(pv) != env_config.horizon or len(load) != env_config.horizon:
        raise ValueError("forecast trajectories must have length == horizon")
    rng = np.random.default_rng(config.seed)
    table = QTable(hems.num_action_slots(env_config))
    epsilon = config.epsilon_initial
    episode_returns: list[float] = []

    for _ in range(config.episodes):
        state = hems.initial_state(env_config)
        key = discretize(state, env_config, config)
        feasible = hems.enumerate_actions(env_config, state)
        ep_return = 0.0
        for t in range(env_config.horizon):
            action = select_action(table, key, feasible, env_config, epsilon, rng)
            outcome = hems.step(env_config, state, action, float(pv[t]), float(load[t]))
            ep_return += outcome.reward
            if t + 1 < env_config.horizon:
                next_state = outcome.next_state
                next_key = discretize(next_state, env_config, config)
                next_feasible = hems.enumerate_actions(env_config, next_state)
                next_indices = [hems.action_index(env_config, a) for a in next_feasible]
            else:
                next_state, next_key, next_feasible, next_indices = None, None, [], []
            q_update(table, key, hems.action_index(env_config, action),
                     outcome.reward, next_key, next_indices,
                     config.learning_rate, config.discount)
            if next_state is None:
                break
            state, key, feasible = next_state, next_key, next_feasible
        episode_returns.append(ep_return)
        epsilon = max(epsilon * config.epsilon_decay, config.epsilon_floor)

    predicted_profit, _ = test_online(table, config, env_config, pv, load)
    return table, predicted_profit, episode_returns


def greedy_policy(table: QTable, config: QLearnConfig, env_config: HemsConfig):
    """Frozen greedy policy; the argmax is taken over currently feasible
    actions only, which doubles as the fallback when the trained preference
    is infeasible under the actual trajectories."""
    def policy(state: EnvState) -> DispatchAction:
        key = discretize(state, env_config, config)
        feasible = hems.enumerate_actions(env_config, state)
        return select_action(table, key, feasible, env_config, 0.0,
                             np.random.default_rng(0))
    return policy


def test_online(table: QTable, config: QLearnConfig, env_config: HemsConfig,
                actual_pv_kw: np.ndarray, actual_load_kw: np.ndarray
                ) -> tuple[float, list[hems.StepOutcome]]:
    """Single greedy rollout of the frozen table on actual trajectories."""
    return hems.rollout(env_config, greedy_policy(table, config, env_config),
                        actual_pv_kw, actual_load_kw)
