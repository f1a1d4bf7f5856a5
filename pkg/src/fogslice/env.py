"""Markov environment: harvest and arrival chains, battery dynamics, observations.

Per-node energy harvest and per-service workload arrivals each follow a
finite Markov chain; chains are mutually independent, so the joint
transition probability is the product of the per-chain row entries.
Batteries evolve deterministically given consumption: energy harvested
during a slot becomes usable the next slot, and a slot can never consume
more than the battery held at its start.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

ROW_TOL = 1e-9


class CausalityViolation(ValueError):
    """A slot tried to consume energy it does not hold yet."""


@dataclass(frozen=True)
class MarkovChainSpec:
    """Finite Markov chain over scalar levels.

    Attributes:
        levels: Value attached to each chain state (harvest units or req/s).
        transition: Row-stochastic matrix; transition[i, j] is the
            probability of moving from state i to state j.
    """

    levels: tuple[float, ...]
    transition: np.ndarray

    def __post_init__(self):
        trans = np.asarray(self.transition, dtype=float)
        n = len(self.levels)
        if trans.shape != (n, n):
            raise ValueError(f"transition must be {n}x{n}, got {trans.shape}")
        if np.any(trans < 0):
            raise ValueError("transition entries must be >= 0")
        if np.any(np.abs(trans.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("transition rows must sum to 1")
        trans.setflags(write=False)
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))

    @property
    def n_states(self) -> int:
        return len(self.levels)

    def stationary(self) -> np.ndarray:
        """Stationary distribution, solved from pi P = pi, sum(pi) = 1."""
        n = self.n_states
        a = np.vstack([self.transition.T - np.eye(n), np.ones(n)])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()

    @classmethod
    def constant(cls, value: float) -> "MarkovChainSpec":
        return cls(levels=(value,), transition=np.array([[1.0]]))


def uniform_harvest(high: int, low: int = 0) -> MarkovChainSpec:
    """Harvest chain drawing uniformly from {low, ..., high} each slot."""
    if high < low:
        raise ValueError("high must be >= low")
    n = high - low + 1
    levels = tuple(range(low, high + 1))
    return MarkovChainSpec(levels=levels, transition=np.full((n, n), 1.0 / n))


def bursty_arrivals(low_rate: float, high_rate: float, persistence: float) -> MarkovChainSpec:
    """Two-level arrival chain that stays in its current level with the given probability."""
    if not 0.0 <= persistence <= 1.0:
        raise ValueError("persistence must be in [0, 1]")
    p = persistence
    return MarkovChainSpec(
        levels=(low_rate, high_rate),
        transition=np.array([[p, 1.0 - p], [1.0 - p, p]]),
    )


@dataclass(frozen=True)
class EnvState:
    """Global environment state: chain indices plus batteries, hashable."""

    harvest_idx: tuple[int, ...]
    arrival_idx: tuple[tuple[int, ...], ...]  # per node, per service
    battery: tuple[int, ...]


@dataclass(frozen=True)
class LocalObservation:
    """What a single node sees at the start of a slot: its own battery and
    arrival levels, plus optional correlated readings of peer harvest levels."""

    node: int
    battery: int
    arrival_idx: tuple[int, ...]
    peer_harvest: tuple[int, ...] | None = None


@dataclass(frozen=True)
class CorrelatedObservationModel:
    """Noisy side channel onto peer harvest levels.

    A reading equals the peer's true level with probability ``correlation``
    and is uniform over that peer's levels otherwise, independently per peer.
    """

    observer: int
    peers: tuple[int, ...]
    correlation: float

    def __post_init__(self):
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must be in [0, 1]")


@dataclass(frozen=True)
class EnvironmentSpec:
    """Chains and battery limits for every node in the network.

    ``arrivals[i][k]`` drives node i's type-k workload.  In backlogged mode
    arrival chains are pinned at their maximum level: there is always work
    waiting, and work not served within a slot is dropped, not queued.
    """

    harvest: tuple[MarkovChainSpec, ...]
    arrivals: tuple[tuple[MarkovChainSpec, ...], ...]
    battery_cap: tuple[int, ...]
    backlogged: bool = False

    def __post_init__(self):
        if len(self.arrivals) != len(self.harvest) or len(self.battery_cap) != len(self.harvest):
            raise ValueError("harvest, arrivals and battery_cap must align per node")

    @property
    def n_nodes(self) -> int:
        return len(self.harvest)

    def initial_state(self, battery_init: Iterable[int]) -> EnvState:
        battery = tuple(int(b) for b in battery_init)
        if any(b < 0 or b > cap for b, cap in zip(battery, self.battery_cap)):
            raise ValueError("initial battery out of range")
        harvest_idx = tuple(0 for _ in self.harvest)
        if self.backlogged:
            arrival_idx = tuple(
                tuple(int(np.argmax(c.levels)) for c in per_node) for per_node in self.arrivals
            )
        else:
            arrival_idx = tuple(tuple(0 for _ in per_node) for per_node in self.arrivals)
        return EnvState(harvest_idx=harvest_idx, arrival_idx=arrival_idx, battery=battery)

    def arrival_rates(self, state: EnvState) -> np.ndarray:
        """Realized arrival rate per node per service (n x K)."""
        return np.array(
            [
                [chain.levels[idx] for chain, idx in zip(per_node, idx_row)]
                for per_node, idx_row in zip(self.arrivals, state.arrival_idx)
            ]
        )

    def harvest_amounts(self, state: EnvState) -> np.ndarray:
        """Energy harvested during the slot the state describes (integer units)."""
        return np.array(
            [int(c.levels[i]) for c, i in zip(self.harvest, state.harvest_idx)]
        )


def battery_step(battery: int, harvested: int, consumed: int, cap: int) -> int:
    """Battery at the next slot: min(cap, battery + harvested - consumed).

    ``harvested`` is the energy collected during the current slot; it banks
    into the battery only after the slot, so consumption is limited by the
    battery alone.

    Raises:
        CausalityViolation: If consumed exceeds the stored battery.
    """
    if consumed < 0 or harvested < 0:
        raise ValueError("consumed and harvested must be >= 0")
    if consumed > battery:
        raise CausalityViolation(f"consumed {consumed} > battery {battery}")
    return min(int(cap), int(battery) + int(harvested) - int(consumed))


def transition_prob(
    env: EnvironmentSpec,
    prev: EnvState,
    consumed: np.ndarray,
    nxt: EnvState,
) -> float:
    """Probability of moving from prev to nxt given per-node consumption.

    Chains are independent, so the probability is the product of per-chain
    row entries; batteries are deterministic given consumption, so any
    mismatch there makes the transition impossible.
    """
    prob = 1.0
    for i in range(env.n_nodes):
        expected = battery_step(
            prev.battery[i],
            int(env.harvest[i].levels[prev.harvest_idx[i]]),
            int(consumed[i]),
            env.battery_cap[i],
        )
        if nxt.battery[i] != expected:
            return 0.0
        prob *= env.harvest[i].transition[prev.harvest_idx[i], nxt.harvest_idx[i]]
        for k, chain in enumerate(env.arrivals[i]):
            if env.backlogged:
                if nxt.arrival_idx[i][k] != prev.arrival_idx[i][k]:
                    return 0.0
            else:
                prob *= chain.transition[prev.arrival_idx[i][k], nxt.arrival_idx[i][k]]
    return float(prob)


def observation_prob(
    env: EnvironmentSpec,
    obs: LocalObservation,
    nxt: EnvState,
    model: CorrelatedObservationModel | None = None,
) -> float:
    """Probability of a node's observation given the next global state.

    The local projection (own battery and arrival levels) is observed
    exactly: probability 1 when it matches, 0 otherwise.  Under a correlated
    model the peer-harvest readings contribute a mixture factor per peer:
    correlation * [reading == true level] + (1 - correlation) / n_levels.
    """
    i = obs.node
    if obs.battery != nxt.battery[i] or obs.arrival_idx != nxt.arrival_idx[i]:
        return 0.0
    if model is None or obs.peer_harvest is None:
        return 1.0
    if model.observer != i or len(obs.peer_harvest) != len(model.peers):
        raise ValueError("observation does not match the correlated model")
    prob = 1.0
    for reading, peer in zip(obs.peer_harvest, model.peers):
        n_levels = env.harvest[peer].n_states
        match = 1.0 if reading == nxt.harvest_idx[peer] else 0.0
        prob *= model.correlation * match + (1.0 - model.correlation) / n_levels
    return float(prob)


def observe(
    env: EnvironmentSpec,
    state: EnvState,
    node: int,
    model: CorrelatedObservationModel | None = None,
    rng: np.random.Generator | None = None,
) -> LocalObservation:
    """Draw the observation a node receives in the given state."""
    peer_harvest = None
    if model is not None:
        if rng is None:
            raise ValueError("correlated observations need an rng")
        readings = []
        for peer in model.peers:
            true_idx = state.harvest_idx[peer]
            if rng.random() < model.correlation:
                readings.append(true_idx)
            else:
                readings.append(int(rng.integers(env.harvest[peer].n_states)))
        peer_harvest = tuple(readings)
    return LocalObservation(
        node=node,
        battery=state.battery[node],
        arrival_idx=state.arrival_idx[node],
        peer_harvest=peer_harvest,
    )


def _draw(row: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(row)
    idx = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(idx, len(row) - 1)


def sample_step(
    env: EnvironmentSpec,
    state: EnvState,
    consumed: np.ndarray,
    rng: np.random.Generator,
) -> EnvState:
    """Advance every chain one slot and apply the battery recursion.

    Chains are sampled in fixed order (harvest by node, then arrivals by
    node and service) so a seeded generator reproduces the episode exactly.
    """
    battery = tuple(
        battery_step(
            state.battery[i],
            int(env.harvest[i].levels[state.harvest_idx[i]]),
            int(consumed[i]),
            env.battery_cap[i],
        )
        for i in range(env.n_nodes)
    )
    harvest_idx = tuple(
        _draw(env.harvest[i].transition[state.harvest_idx[i]], rng)
        for i in range(env.n_nodes)
    )
    if env.backlogged:
        arrival_idx = state.arrival_idx
    else:
        arrival_idx = tuple(
            tuple(
                _draw(chain.transition[state.arrival_idx[i][k]], rng)
                for k, chain in enumerate(env.arrivals[i])
            )
            for i in range(env.n_nodes)
        )
    return EnvState(harvest_idx=harvest_idx, arrival_idx=arrival_idx, battery=battery)
