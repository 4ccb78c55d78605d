"""Exact finite-horizon solver for the dispatch environment.

Backward induction over the states reachable from the initial state,
reusing the environment's own transition and reward code so that replaying
the returned action sequence reproduces the returned profit bit for bit.
A separate brute-force path enumerator (short horizons only) re-derives
transitions independently as a cross-check on both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hems
from .errors import LatticeMismatch, StateSpaceTooLarge
from .hems import DispatchAction, EnvState, HemsConfig

MAX_STATES = 1_000_000


@dataclass
class ValueTable:
    values: dict[tuple, float]             # state key -> optimal value-to-go
    actions: dict[tuple, DispatchAction]   # state key -> optimal action


def check_lattice(config: HemsConfig, soc_bins: int) -> None:
    """The charge step must land on the SOC bin lattice for the discretized
    problem to be exact."""
    bin_width = (config.soc_max - config.soc_min) / soc_bins
    ratio = config.soc_step / bin_width
    if abs(ratio - round(ratio)) > 1e-9:
        raise LatticeMismatch(
            f"charge SOC step {config.soc_step} is not an integer number of "
            f"bins (bin width {bin_width})"
        )


def solve(config: HemsConfig, pv_kw: np.ndarray, base_load_kw: np.ndarray
          ) -> tuple[float, list[DispatchAction], ValueTable]:
    """Optimal total profit and action sequence by backward induction."""
    pv = np.asarray(pv_kw, dtype=np.float64)
    load = np.asarray(base_load_kw, dtype=np.float64)
    if len(pv) != config.horizon or len(load) != config.horizon:
        raise ValueError("trajectories must have length == horizon")

    # forward reachability, layer by layer
    layers: list[dict[tuple, EnvState]] = [
        {hems.initial_state(config).key(): hems.initial_state(config)}
    ]
    transitions: list[dict[tuple, list[tuple[DispatchAction, float, tuple]]]] = []
    total_states = 1
    for t in range(config.horizon):
        layer = layers[t]
        nxt: dict[tuple, EnvState] = {}
        trans: dict[tuple, list[tuple[DispatchAction, float, tuple]]] = {}
        for key, state in layer.items():
            edges = []
            for action in hems.enumerate_actions(config, state):
                outcome = hems.step(config, state, action, float(pv[t]), float(load[t]))
                nk = outcome.next_state.key()
                nxt[nk] = outcome.next_state
                edges.append((action, outcome.reward, nk))
            trans[key] = edges
        transitions.append(trans)
        layers.append(nxt)
        total_states += len(nxt)
        if total_states > MAX_STATES:
            raise StateSpaceTooLarge(f"more than {MAX_STATES} reachable states")

    # backward induction
    values: dict[tuple, float] = {k: 0.0 for k in layers[config.horizon]}
    best_actions: dict[tuple, DispatchAction] = {}
    for t in range(config.horizon - 1, -1, -1):
        layer_values: dict[tuple, float] = {}
        for key, edges in transitions[t].items():
            best_v = -np.inf
            best_a = None
            for action, reward, nk in edges:
                v = reward + values[nk]
                if v > best_v:
                    best_v, best_a = v, action
            layer_values[key] = best_v
            best_actions[key] = best_a
        values = {**values, **layer_values}

    # extract the optimal path
    state = hems.initial_state(config)
    actions: list[DispatchAction] = []
    profit = 0.0
    for t in range(config.horizon):
        action = best_actions[state.key()]
        outcome = hems.step(config, state, action, float(pv[t]), float(load[t]))
        actions.append(action)
        profit += outcome.reward
        state = outcome.next_state
    return profit, actions, ValueTable(values=values, actions=best_actions)


def brute_force_optimal(config: HemsConfig, pv_kw: np.ndarray,
                        base_load_kw: np.ndarray) -> float:
    """Exhaustive enumeration with an independent transition
    re-implementation; horizons above 6 steps are rejected."""
    if config.horizon > 6:
        raise ValueError("brute force limited to horizon <= 6")
    pv = np.asarray(pv_kw, dtype=np.float64)
    load = np.asarray(base_load_kw, dtype=np.float64)
    arrivals = [dev.arrivals() for dev in config.devices]
    soc_step = config.charge_power_kw * config.step_hours / config.ess_capacity_kwh

    def recurse(t: int, soc: float, queues: tuple) -> float:
        if t == config.horizon:
            # same convention as the environment: leftovers are flagged,
            # not penalized
            return 0.0
        # push arrivals for step t
        qs = list(queues)
        for l, arrs in enumerate(arrivals):
            for arr, length in arrs:
                if arr == t:
                    qs[l] = qs[l] + ((length, 0),)
        best = -np.inf
        for q in (-1, 0, 1):
            soc2 = soc - q * soc_step
            if soc2 < config.soc_min - 1e-9 or soc2 > config.soc_max + 1e-9:
                continue
            for bits in _bit_combos(len(qs)):
                ok = True
                new_qs = []
                dev_power = 0.0
                for l, on in enumerate(bits):
                    queue = qs[l]
                    dev = config.devices[l]
                    if on:
                        if not queue or any(a >= dev.max_wait for _, a in queue[1:]):
                            ok = False
                            break
                        rem, age = queue[0]
                        q2 = ([(rem - 1, age)] if rem > 1 else []) + [
                            (r, a + 1) for r, a in queue[1:]
                        ]
                        dev_power += dev.rated_power_kw
                    else:
                        if any(a >= dev.max_wait for _, a in queue):
                            ok = False
                            break
                        q2 = [(r, a + 1) for r, a in queue]
                    new_qs.append(tuple(q2))
                if not ok:
                    continue
                net = config.charge_power_kw * q + pv[t] - (load[t] + dev_power)
                price = config.price_sell[t] if net > 0 else config.price_buy[t]
                reward = net * config.step_hours * price
                tail = recurse(t + 1, soc2, tuple(new_qs))
                if reward + tail > best:
                    best = reward + tail
        return best

    empty = tuple(() for _ in config.devices)
    return recurse(0, config.initial_soc, empty)


def _bit_combos(n: int):
    if n == 0:
        yield ()
        return
    for head in (0, 1):
        for rest in _bit_combos(n - 1):
            yield (head,) + rest
