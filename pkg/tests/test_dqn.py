"""Replay, exploration, and TD-target contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fedsched import nn
from fedsched.dqn import (
    EpsilonSchedule,
    Hyperparams,
    QLearner,
    ReplayBuffer,
    Transition,
    epsilon_greedy,
    maybe_sync_target,
    td_targets,
)


def make_transition(tag: int, dim: int = 3, terminal: bool = False) -> Transition:
    state = np.full(dim, float(tag))
    return Transition(state, tag % 2, float(tag), state + 0.5, terminal)


class TestReplayBuffer:
    def test_ring_semantics(self):
        buf = ReplayBuffer(2)
        for tag in (1, 2, 3):
            buf.push(make_transition(tag))
        assert [t.reward for t in buf.snapshot()] == [2.0, 3.0]

    def test_single_element_sample(self):
        buf = ReplayBuffer(4)
        buf.push(make_transition(7))
        sampled = buf.sample(1, np.random.default_rng(0))
        assert len(sampled) == 1 and sampled[0].reward == 7.0

    def test_size_caps_at_capacity(self):
        buf = ReplayBuffer(100)
        for tag in range(10_000):
            buf.push(make_transition(tag))
        assert len(buf) == 100
        assert buf.inserted == 10_000

    def test_fifo_keeps_last_capacity_inserts(self):
        buf = ReplayBuffer(5)
        for tag in range(123):
            buf.push(make_transition(tag))
        assert [t.reward for t in buf.snapshot()] == [118.0, 119.0, 120.0, 121.0, 122.0]

    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=40))
    @settings(max_examples=40, deadline=None)
    def test_fifo_property(self, capacity, n_pushes):
        buf = ReplayBuffer(capacity)
        for tag in range(n_pushes):
            buf.push(make_transition(tag))
        expected = list(range(max(0, n_pushes - capacity), n_pushes))
        assert [int(t.reward) for t in buf.snapshot()] == expected

    def test_sample_with_replacement_from_singleton(self):
        buf = ReplayBuffer(10)
        buf.push(make_transition(3))
        sampled = buf.sample(32, np.random.default_rng(1))
        assert len(sampled) == 32
        assert all(t.reward == 3.0 for t in sampled)

    def test_empty_buffer_skip_signal(self):
        buf = ReplayBuffer(10)
        assert buf.sample(4, np.random.default_rng(0)) is None
        assert buf.sample_arrays(4, np.random.default_rng(0)) is None

    def test_sampling_uniformity_chi_squared(self):
        buf = ReplayBuffer(10)
        for tag in range(10):
            buf.push(make_transition(tag))
        rng = np.random.default_rng(42)
        draws = buf.sample(100_000, rng)
        counts = np.bincount([int(t.reward) for t in draws], minlength=10)
        assert stats.chisquare(counts).pvalue > 0.001

    def test_sample_arrays_matches_contents(self):
        buf = ReplayBuffer(3)
        for tag in (5, 6):
            buf.push(make_transition(tag, terminal=tag == 6))
        batch = buf.sample_arrays(64, np.random.default_rng(3))
        assert batch.states.shape == (64, 3)
        assert set(batch.rewards.tolist()) <= {5.0, 6.0}
        assert np.array_equal(batch.terminals, batch.rewards == 6.0)

    def test_capacity_validation(self):
        with pytest.raises(ValueError):
            ReplayBuffer(0)


class TestEpsilonSchedule:
    def test_endpoints_and_clamp(self):
        sched = EpsilonSchedule(1.0, 0.05, 100)
        assert sched.value(0) == 1.0
        assert sched.value(50) == pytest.approx(0.525)
        assert sched.value(100) == pytest.approx(0.05)
        assert sched.value(100_000) == pytest.approx(0.05)
        assert sched.value(-3) == 1.0

    def test_bounds_validated(self):
        with pytest.raises(ValueError):
            EpsilonSchedule(1.2, 0.0, 10)
        with pytest.raises(ValueError):
            EpsilonSchedule(0.5, 0.1, 0)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=50, deadline=None)
    def test_value_always_in_unit_interval(self, step):
        sched = EpsilonSchedule(0.9, 0.02, 777)
        assert 0.0 <= sched.value(step) <= 1.0


class TestEpsilonGreedy:
    def test_pure_argmax_at_zero(self):
        rng = np.random.default_rng(0)
        assert epsilon_greedy(np.array([0.1, 0.9, 0.3]), 0.0, rng) == 1

    def test_tie_breaks_to_lowest_index(self):
        rng = np.random.default_rng(0)
        assert epsilon_greedy(np.array([0.5, 0.5]), 0.0, rng) == 0

    def test_zero_epsilon_consumes_no_randomness(self):
        rng = np.random.default_rng(123)
        state_before = rng.bit_generator.state
        epsilon_greedy(np.array([1.0, 2.0]), 0.0, rng)
        assert rng.bit_generator.state == state_before

    def test_uniform_at_epsilon_one(self):
        rng = np.random.default_rng(7)
        counts = np.zeros(3)
        for _ in range(30_000):
            counts[epsilon_greedy(np.array([5.0, 1.0, 1.0]), 1.0, rng)] += 1
        freqs = counts / counts.sum()
        assert np.all(np.abs(freqs - 1 / 3) < 0.01)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            epsilon_greedy(np.array([]), 0.5, np.random.default_rng(0))


def constant_net(n_inputs, biases):
    """Zero-weight network whose output equals the final-layer bias."""
    dims = (n_inputs, 4, 3, len(biases))
    net = nn.QNetwork(dims, np.zeros(nn._param_count(dims)))
    net.biases[-1][:] = biases
    return net


class TestTdTargets:
    def test_terminal_is_reward(self):
        target_net = constant_net(3, [100.0, 50.0])
        batch = [Transition(np.zeros(3), 0, 1.0, np.zeros(3), True)]
        assert td_targets(batch, target_net, 0.95).tolist() == [1.0]

    def test_nonterminal_bootstraps(self):
        target_net = constant_net(3, [1.0, 0.3])
        batch = [Transition(np.zeros(3), 0, 0.0, np.zeros(3), False)]
        assert td_targets(batch, target_net, 0.95).tolist() == pytest.approx([0.95])

    def test_gamma_zero_gives_rewards(self):
        target_net = constant_net(3, [1.0, 0.3])
        batch = [
            Transition(np.zeros(3), 0, 0.25, np.zeros(3), False),
            Transition(np.zeros(3), 1, 0.75, np.zeros(3), True),
        ]
        assert td_targets(batch, target_net, 0.0).tolist() == [0.25, 0.75]

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            td_targets([], constant_net(3, [0.0]), 0.9)

    @given(
        st.floats(min_value=-1, max_value=1),
        st.floats(min_value=-1, max_value=1),
        st.floats(min_value=-1, max_value=1),
        st.floats(min_value=-1, max_value=1),
    )
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_reward_and_next_value(self, r_low, dr, q_low, dq):
        r_high = r_low + abs(dr)
        q_high = q_low + abs(dq)
        gamma = 0.9

        def target(reward, q_value):
            net = constant_net(2, [q_value])
            batch = [Transition(np.zeros(2), 0, reward, np.zeros(2), False)]
            return td_targets(batch, net, gamma)[0]

        assert target(r_high, q_low) >= target(r_low, q_low) - 1e-12
        assert target(r_low, q_high) >= target(r_low, q_low) - 1e-12


class TestTargetSync:
    def test_period_one_always_syncs(self):
        rng = np.random.default_rng(0)
        learner = nn.mlp_new(4, 2, rng)
        target = nn.mlp_new(4, 2, rng)
        for step in range(1, 5):
            learner.params += 1.0
            maybe_sync_target(learner, target, step, 1)
            assert np.array_equal(learner.params, target.params)

    def test_period_500_boundary(self):
        rng = np.random.default_rng(1)
        learner = nn.mlp_new(4, 2, rng)
        target = nn.clone_network(learner)
        learner.params += 1.0
        maybe_sync_target(learner, target, 499, 500)
        assert not np.array_equal(learner.params, target.params)
        maybe_sync_target(learner, target, 500, 500)
        assert np.array_equal(learner.params, target.params)

    def test_synced_nets_agree_on_forward(self):
        rng = np.random.default_rng(2)
        learner = nn.mlp_new(4, 2, rng)
        target = nn.mlp_new(4, 2, rng)
        maybe_sync_target(learner, target, 0, 5)  # step 0 syncs
        x = rng.normal(size=4)
        assert np.array_equal(nn.forward(learner, x), nn.forward(target, x))

    def test_period_validated(self):
        rng = np.random.default_rng(3)
        net = nn.mlp_new(4, 2, rng)
        with pytest.raises(ValueError):
            maybe_sync_target(net, net, 1, 0)


class TestQLearner:
    def test_skips_update_when_buffer_empty(self):
        hp = Hyperparams()
        learner = QLearner(4, 3, hp, np.random.default_rng(0))
        assert learner.train_step(np.random.default_rng(1)) is None
        assert learner.steps == 0

    def test_trains_and_syncs(self):
        hp = Hyperparams(target_sync_period=2, buffer_capacity=16, batch_size=4)
        learner = QLearner(4, 3, hp, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        for tag in range(8):
            state = rng.normal(size=4)
            learner.push(Transition(state, tag % 3, float(tag % 2), state, tag % 2 == 0))
        initial = learner.net.params.copy()
        loss = learner.train_step(rng)
        assert loss is not None and loss >= 0.0
        assert learner.steps == 1
        assert not np.array_equal(learner.net.params, initial)
        learner.train_step(rng)  # step 2 -> hard sync
        assert np.array_equal(learner.net.params, learner.target.params)
