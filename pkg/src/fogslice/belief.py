"""Belief tracking and finite-horizon planning for partially observed agents.

An agent keeps two beliefs: a distribution over the states of an explicit
finite model of its local environment, filtered with the standard
predict-then-correct rule, and per-neighbor Dirichlet counts over a small
set of capability types (how much spare capacity a neighbor tends to
offer).  Planning expands the belief-MDP to a fixed depth with
memoization, so repeated beliefs are evaluated once.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

ROW_TOL = 1e-9


class ImpossibleObservation(ValueError):
    """The observation has zero likelihood under the current belief."""


@dataclass(frozen=True)
class TypeSpace:
    """Quantized capability types for a neighbor, by spare whole units."""

    labels: tuple[str, ...]
    spare_units: tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.spare_units) or not self.labels:
            raise ValueError("labels and spare_units must align and be non-empty")
        if any(u < 0 for u in self.spare_units):
            raise ValueError("spare units must be >= 0")
        if list(self.spare_units) != sorted(self.spare_units):
            raise ValueError("spare_units must be sorted ascending")

    @classmethod
    def default(cls) -> "TypeSpace":
        return cls(("deficit", "neutral", "surplus"), (0, 1, 3))

    @property
    def n_types(self) -> int:
        return len(self.labels)

    def classify(self, spare: float) -> int:
        """Index of the nearest type level; ties go to the lower index."""
        diffs = [abs(spare - u) for u in self.spare_units]
        return int(np.argmin(diffs))


@dataclass(frozen=True)
class FinitePomdp:
    """Explicit finite model: T (A,S,S), Theta (A,S,O), R (S,A)."""

    states: tuple
    actions: tuple
    observations: tuple
    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    gamma: float = 0.9

    def __post_init__(self):
        s_n, a_n, o_n = len(self.states), len(self.actions), len(self.observations)
        t = np.asarray(self.transition, dtype=float)
        th = np.asarray(self.observation, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        if t.shape != (a_n, s_n, s_n):
            raise ValueError(f"transition must be ({a_n},{s_n},{s_n})")
        if th.shape != (a_n, s_n, o_n):
            raise ValueError(f"observation must be ({a_n},{s_n},{o_n})")
        if r.shape != (s_n, a_n):
            raise ValueError(f"reward must be ({s_n},{a_n})")
        if np.any(t < -ROW_TOL) or np.any(np.abs(t.sum(axis=2) - 1.0) > 1e-6):
            raise ValueError("transition rows must be stochastic")
        if np.any(th < -ROW_TOL) or np.any(np.abs(th.sum(axis=2) - 1.0) > 1e-6):
            raise ValueError("observation rows must be stochastic")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        for arr in (t, th, r):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "observation", th)
        object.__setattr__(self, "reward", r)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class BeliefState:
    """Environment belief vector plus per-neighbor type pseudo-counts."""

    env: np.ndarray
    type_counts: np.ndarray  # (n_neighbors, n_types), all >= prior > 0

    def __post_init__(self):
        env = np.asarray(self.env, dtype=float)
        counts = np.asarray(self.type_counts, dtype=float)
        if abs(env.sum() - 1.0) > 1e-6 or np.any(env < -ROW_TOL):
            raise ValueError("env belief must be a probability vector")
        if counts.ndim != 2 or np.any(counts <= 0):
            raise ValueError("type counts must be positive (include the prior)")
        env.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "env", env)
        object.__setattr__(self, "type_counts", counts)

    def type_means(self) -> np.ndarray:
        return self.type_counts / self.type_counts.sum(axis=1, keepdims=True)


def uniform_belief(model: FinitePomdp, n_neighbors: int, type_space: TypeSpace) -> BeliefState:
    return BeliefState(
        env=np.full(model.n_states, 1.0 / model.n_states),
        type_counts=np.ones((n_neighbors, type_space.n_types)),
    )


def point_belief(model: FinitePomdp, state_idx: int, n_neighbors: int = 0, n_types: int = 1) -> BeliefState:
    env = np.zeros(model.n_states)
    env[state_idx] = 1.0
    counts = np.ones((n_neighbors, n_types)) if n_neighbors else np.ones((0, n_types))
    return BeliefState(env=env, type_counts=counts)


def update_env_belief(
    model: FinitePomdp, env: np.ndarray, action_idx: int, obs_idx: int
) -> np.ndarray:
    """Filtered posterior after taking an action and seeing an observation.

    Raises:
        ImpossibleObservation: If the observation has zero likelihood; the
            caller's belief is left as it was.
    """
    env = np.asarray(env, dtype=float)
    predicted = model.transition[action_idx].T @ env
    joint = model.observation[action_idx, :, obs_idx] * predicted
    z = joint.sum()
    if z <= 1e-300:
        raise ImpossibleObservation(
            f"observation {model.observations[obs_idx]!r} has zero likelihood"
        )
    return joint / z


def update_type_belief(counts: np.ndarray, neighbor_idx: int, type_idx: int) -> np.ndarray:
    """Conjugate count update after observing one realized capability."""
    counts = np.asarray(counts, dtype=float).copy()
    counts[neighbor_idx, type_idx] += 1.0
    return counts


def observation_probs(model: FinitePomdp, env: np.ndarray, action_idx: int) -> np.ndarray:
    """Pr(o | belief, action) for every observation."""
    predicted = model.transition[action_idx].T @ np.asarray(env, dtype=float)
    return model.observation[action_idx].T @ predicted


def type_profile_rewards(
    reward_by_profile: np.ndarray, profiles: list[tuple[int, ...]], counts: np.ndarray
) -> np.ndarray:
    """Average (S, A) reward over neighbor-type profiles weighted by belief.

    reward_by_profile: (P, S, A) with one slab per profile in ``profiles``;
    a profile assigns one type index per neighbor and its probability is
    the product of the per-neighbor Dirichlet means.
    """
    reward_by_profile = np.asarray(reward_by_profile, dtype=float)
    counts = np.asarray(counts, dtype=float)
    means = counts / counts.sum(axis=1, keepdims=True)
    out = np.zeros(reward_by_profile.shape[1:])
    for slab, profile in zip(reward_by_profile, profiles):
        p = 1.0
        for j, t in enumerate(profile):
            p *= means[j, t]
        out += p * slab
    return out


def enumerate_profiles(n_neighbors: int, n_types: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(n_types), repeat=n_neighbors))


def expected_slot_reward(model: FinitePomdp, env: np.ndarray, action_idx: int | None = None):
    """Immediate expected reward under the belief, per action or for one."""
    env = np.asarray(env, dtype=float)
    values = env @ model.reward
    if action_idx is None:
        return values
    return float(values[action_idx])


def _key(env: np.ndarray, depth: int):
    return (depth, tuple(np.round(env, 12)))


def bellman_value(
    model: FinitePomdp, env: np.ndarray, depth: int, cache: dict | None = None
) -> float:
    """Optimal finite-horizon value of a belief.

    Depth 0 is the best immediate expected reward; each further level adds
    one discounted lookahead over observations.  Beliefs reached more than
    once (point-mass chains especially) are evaluated a single time via the
    cache, which may be shared across calls on the same model.
    """
    if cache is None:
        cache = {}
    return _bellman(model, np.asarray(env, dtype=float), depth, cache)


def _bellman(model, env, depth, cache):
    key = _key(env, depth)
    if key in cache:
        return cache[key]
    immediate = env @ model.reward
    if depth <= 0:
        value = float(immediate.max())
    else:
        best = -np.inf
        for a in range(model.n_actions):
            q = immediate[a]
            probs = observation_probs(model, env, a)
            for o in range(len(model.observations)):
                if probs[o] <= 1e-15:
                    continue
                nxt = update_env_belief(model, env, a, o)
                q += model.gamma * probs[o] * _bellman(model, nxt, depth - 1, cache)
            best = max(best, q)
        value = float(best)
    cache[key] = value
    return value


def select_action(
    model: FinitePomdp,
    env: np.ndarray,
    depth: int,
    action_costs: np.ndarray | None = None,
    cache: dict | None = None,
    tie_tol: float = 1e-9,
) -> int:
    """Best action index at the given depth; ties prefer the cheaper action.

    ``action_costs`` orders equally-valued actions (typically energy
    spent); remaining ties go to the lower index.
    """
    if cache is None:
        cache = {}
    env = np.asarray(env, dtype=float)
    immediate = env @ model.reward
    q = np.array(immediate, dtype=float)
    if depth > 0:
        for a in range(model.n_actions):
            probs = observation_probs(model, env, a)
            for o in range(len(model.observations)):
                if probs[o] <= 1e-15:
                    continue
                nxt = update_env_belief(model, env, a, o)
                q[a] += model.gamma * probs[o] * _bellman(model, nxt, depth - 1, cache)
    best = q.max()
    candidates = [a for a in range(model.n_actions) if q[a] >= best - tie_tol]
    if action_costs is not None:
        costs = np.asarray(action_costs, dtype=float)
        cheapest = min(costs[a] for a in candidates)
        candidates = [a for a in candidates if costs[a] <= cheapest + tie_tol]
    return candidates[0]
