"""Markov environment: chains, battery recursion, transitions, sampling."""

import itertools

import numpy as np
import pytest

from fogslice.env import (
    CausalityViolation,
    CorrelatedObservationModel,
    EnvironmentSpec,
    EnvState,
    LocalObservation,
    MarkovChainSpec,
    battery_step,
    bursty_arrivals,
    observation_prob,
    observe,
    sample_step,
    transition_prob,
    uniform_harvest,
)


def single_node_env(harvest=None, arrivals=None, cap=100, backlogged=False):
    if harvest is None:
        harvest = MarkovChainSpec.constant(5.0)
    if arrivals is None:
        arrivals = MarkovChainSpec.constant(20.0)
    return EnvironmentSpec(
        harvest=(harvest,),
        arrivals=((arrivals,),),
        battery_cap=(cap,),
        backlogged=backlogged,
    )


class TestChains:
    def test_rows_must_be_stochastic(self):
        with pytest.raises(ValueError):
            MarkovChainSpec(levels=(1.0, 2.0), transition=np.array([[0.5, 0.4], [0.5, 0.5]]))
        with pytest.raises(ValueError):
            MarkovChainSpec(levels=(1.0, 2.0), transition=np.array([[1.1, -0.1], [0.5, 0.5]]))

    def test_stationary_of_two_state_chain(self):
        chain = MarkovChainSpec(
            levels=(0.0, 1.0), transition=np.array([[0.9, 0.1], [0.3, 0.7]])
        )
        pi = chain.stationary()
        # balance: pi0 * 0.1 = pi1 * 0.3
        assert pi == pytest.approx([0.75, 0.25], abs=1e-9)
        assert pi @ chain.transition == pytest.approx(pi, abs=1e-9)

    def test_uniform_harvest_preset(self):
        chain = uniform_harvest(4)
        assert list(chain.levels) == [0, 1, 2, 3, 4]
        assert np.allclose(chain.transition, 0.2)

    def test_bursty_preset_persists(self):
        chain = bursty_arrivals(10.0, 50.0, 0.8)
        assert list(chain.levels) == [10.0, 50.0]
        assert chain.transition[0, 0] == pytest.approx(0.8)
        assert chain.transition[1, 1] == pytest.approx(0.8)


class TestBatteryStep:
    def test_plain_update(self):
        assert battery_step(50, 30, 20, 100) == 60

    def test_cap_binds(self):
        assert battery_step(90, 30, 0, 100) == 100

    def test_overdraw_rejected(self):
        with pytest.raises(CausalityViolation):
            battery_step(10, 0, 20, 100)

    def test_spend_everything(self):
        assert battery_step(10, 0, 10, 100) == 0


class TestTransitionProb:
    def test_deterministic_chains_unique_successor(self):
        chain = MarkovChainSpec(levels=(2.0, 3.0), transition=np.eye(2))
        env = single_node_env(harvest=chain, arrivals=chain, cap=50)
        prev = EnvState(harvest_idx=(1,), arrival_idx=((0,),), battery=(10,))
        consumed = np.array([4])
        good = EnvState(harvest_idx=(1,), arrival_idx=((0,),), battery=(9,))
        assert transition_prob(env, prev, consumed, good) == pytest.approx(1.0)
        for h, a in itertools.product(range(2), range(2)):
            nxt = EnvState(harvest_idx=(h,), arrival_idx=((a,),), battery=(9,))
            if (h, a) != (1, 0):
                assert transition_prob(env, prev, consumed, nxt) == 0.0

    def test_independent_product(self):
        harvest = MarkovChainSpec(levels=(0.0, 2.0), transition=np.array([[0.3, 0.7], [0.7, 0.3]]))
        arr = MarkovChainSpec(levels=(5.0, 9.0), transition=np.array([[0.6, 0.4], [0.6, 0.4]]))
        env = single_node_env(harvest=harvest, arrivals=arr, cap=50)
        prev = EnvState(harvest_idx=(0,), arrival_idx=((1,),), battery=(10,))
        nxt = EnvState(harvest_idx=(1,), arrival_idx=((1,),), battery=(10,))
        # harvest switches (0.7) while arrivals stay high (0.4), battery 10+0-0
        assert transition_prob(env, prev, np.array([0]), nxt) == pytest.approx(0.28)

    def test_wrong_battery_is_impossible(self):
        env = single_node_env()
        prev = EnvState(harvest_idx=(0,), arrival_idx=((0,),), battery=(10,))
        nxt = EnvState(harvest_idx=(0,), arrival_idx=((0,),), battery=(10,))
        # constant harvest 5, consumed 2: only battery 13 is reachable
        assert transition_prob(env, prev, np.array([2]), nxt) == 0.0
        good = EnvState(harvest_idx=(0,), arrival_idx=((0,),), battery=(13,))
        assert transition_prob(env, prev, np.array([2]), good) == pytest.approx(1.0)

    def test_sums_to_one_over_next_states(self):
        harvest = MarkovChainSpec(levels=(0.0, 3.0), transition=np.array([[0.2, 0.8], [0.5, 0.5]]))
        arr = MarkovChainSpec(levels=(5.0, 9.0), transition=np.array([[0.9, 0.1], [0.6, 0.4]]))
        env = single_node_env(harvest=harvest, arrivals=arr, cap=50)
        prev = EnvState(harvest_idx=(1,), arrival_idx=((0,),), battery=(8,))
        consumed = np.array([3])
        total = 0.0
        for h, a, b in itertools.product(range(2), range(2), range(51)):
            nxt = EnvState(harvest_idx=(h,), arrival_idx=((a,),), battery=(b,))
            total += transition_prob(env, prev, consumed, nxt)
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_backlogged_pins_arrivals(self):
        arr = MarkovChainSpec(levels=(5.0, 9.0), transition=np.array([[0.5, 0.5], [0.5, 0.5]]))
        env = single_node_env(arrivals=arr, backlogged=True)
        prev = EnvState(harvest_idx=(0,), arrival_idx=((1,),), battery=(0,))
        moved = EnvState(harvest_idx=(0,), arrival_idx=((0,),), battery=(5,))
        stayed = EnvState(harvest_idx=(0,), arrival_idx=((1,),), battery=(5,))
        assert transition_prob(env, prev, np.array([0]), moved) == 0.0
        assert transition_prob(env, prev, np.array([0]), stayed) == pytest.approx(1.0)


class TestObservation:
    def test_exact_projection(self):
        env = single_node_env()
        state = EnvState(harvest_idx=(0,), arrival_idx=((0,),), battery=(42,))
        obs = LocalObservation(node=0, battery=42, arrival_idx=(0,))
        assert observation_prob(env, obs, state) == 1.0
        wrong = LocalObservation(node=0, battery=41, arrival_idx=(0,))
        assert observation_prob(env, wrong, state) == 0.0

    def test_correlated_peer_harvest(self):
        harvest = MarkovChainSpec(levels=(0.0, 4.0), transition=np.full((2, 2), 0.5))
        env = EnvironmentSpec(
            harvest=(harvest, harvest),
            arrivals=(
                (MarkovChainSpec.constant(10.0),),
                (MarkovChainSpec.constant(10.0),),
            ),
            battery_cap=(50, 50),
        )
        model = CorrelatedObservationModel(observer=0, peers=(1,), correlation=1.0)
        state = EnvState(harvest_idx=(0, 1), arrival_idx=((0,), (0,)), battery=(5, 5))
        right = LocalObservation(node=0, battery=5, arrival_idx=(0,), peer_harvest=(1,))
        wrong = LocalObservation(node=0, battery=5, arrival_idx=(0,), peer_harvest=(0,))
        assert observation_prob(env, right, state, model) == pytest.approx(1.0)
        assert observation_prob(env, wrong, state, model) == pytest.approx(0.0)

    def test_partial_correlation_mixture(self):
        harvest = MarkovChainSpec(levels=(0.0, 4.0), transition=np.full((2, 2), 0.5))
        env = EnvironmentSpec(
            harvest=(harvest, harvest),
            arrivals=(
                (MarkovChainSpec.constant(10.0),),
                (MarkovChainSpec.constant(10.0),),
            ),
            battery_cap=(50, 50),
        )
        model = CorrelatedObservationModel(observer=0, peers=(1,), correlation=0.6)
        state = EnvState(harvest_idx=(0, 1), arrival_idx=((0,), (0,)), battery=(5, 5))
        right = LocalObservation(node=0, battery=5, arrival_idx=(0,), peer_harvest=(1,))
        wrong = LocalObservation(node=0, battery=5, arrival_idx=(0,), peer_harvest=(0,))
        assert observation_prob(env, right, state, model) == pytest.approx(0.6 + 0.4 / 2)
        assert observation_prob(env, wrong, state, model) == pytest.approx(0.4 / 2)

    def test_observe_projects_state(self, rng):
        env = single_node_env()
        state = EnvState(harvest_idx=(0,), arrival_idx=((0,),), battery=(7,))
        obs = observe(env, state, 0)
        assert obs.battery == 7
        assert obs.arrival_idx == (0,)
        assert obs.peer_harvest is None


class TestSampleStep:
    def test_deterministic_chain_unique_successor(self, rng):
        chain = MarkovChainSpec(levels=(2.0, 3.0), transition=np.eye(2))
        env = single_node_env(harvest=chain, arrivals=chain, cap=50)
        state = EnvState(harvest_idx=(1,), arrival_idx=((0,),), battery=(10,))
        nxt = sample_step(env, state, np.array([4]), rng)
        assert nxt == EnvState(harvest_idx=(1,), arrival_idx=((0,),), battery=(9,))

    def test_same_seed_same_trajectory(self):
        harvest = uniform_harvest(3)
        arr = bursty_arrivals(5.0, 25.0, 0.7)
        env = single_node_env(harvest=harvest, arrivals=arr, cap=30)
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(99)
            state = env.initial_state([10])
            path = [state]
            for _ in range(200):
                state = sample_step(env, state, np.array([0]), rng)
                path.append(state)
            runs.append(path)
        assert runs[0] == runs[1]

    def test_battery_stays_in_bounds(self, rng):
        env = single_node_env(harvest=uniform_harvest(6), cap=12)
        state = env.initial_state([5])
        for _ in range(2000):
            spend = int(rng.integers(0, state.battery[0] + 1))
            state = sample_step(env, state, np.array([spend]), rng)
            assert 0 <= state.battery[0] <= 12

    def test_empirical_matches_transition_prob(self):
        rng = np.random.default_rng(4242)
        harvest = MarkovChainSpec(
            levels=(0.0, 2.0, 5.0),
            transition=np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.25, 0.25, 0.5]]),
        )
        env = single_node_env(harvest=harvest, cap=10**9)
        state = EnvState(harvest_idx=(1,), arrival_idx=((0,),), battery=(0,))
        draws = 30_000
        counts = np.zeros(3)
        for _ in range(draws):
            nxt = sample_step(env, state, np.array([0]), rng)
            counts[nxt.harvest_idx[0]] += 1
        freq = counts / draws
        expect = harvest.transition[1]
        sigma = np.sqrt(expect * (1 - expect) / draws)
        assert np.all(np.abs(freq - expect) <= 3 * sigma)

    def test_chapman_kolmogorov_horizon_two(self):
        rng = np.random.default_rng(515151)
        t1 = np.array([[0.7, 0.3], [0.4, 0.6]])
        harvest = MarkovChainSpec(levels=(0.0, 2.0), transition=t1)
        env = single_node_env(harvest=harvest, cap=10**9)
        draws = 30_000
        counts = np.zeros(2)
        for _ in range(draws):
            state = EnvState(harvest_idx=(0,), arrival_idx=((0,),), battery=(0,))
            state = sample_step(env, state, np.array([0]), rng)
            state = sample_step(env, state, np.array([0]), rng)
            counts[state.harvest_idx[0]] += 1
        freq = counts / draws
        expect = (t1 @ t1)[0]
        sigma = np.sqrt(expect * (1 - expect) / draws)
        assert np.all(np.abs(freq - expect) <= 3 * sigma)

    def test_stationary_convergence(self):
        rng = np.random.default_rng(77)
        transition = np.array([[0.85, 0.15, 0.0], [0.2, 0.6, 0.2], [0.05, 0.35, 0.6]])
        chain = MarkovChainSpec(levels=(0.0, 1.0, 2.0), transition=transition)
        env = single_node_env(harvest=chain, cap=10**9)
        state = env.initial_state([0])
        burn, steps = 2000, 100_000
        counts = np.zeros(3)
        for t in range(burn + steps):
            state = sample_step(env, state, np.array([0]), rng)
            if t >= burn:
                counts[state.harvest_idx[0]] += 1
        freq = counts / steps
        tv = 0.5 * np.abs(freq - chain.stationary()).sum()
        assert tv < 0.02
