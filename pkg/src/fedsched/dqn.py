"""Generic DQN machinery shared by every agent.

Replay buffers with FIFO eviction, linear epsilon annealing, epsilon-greedy
selection, TD(0) targets against a periodically hard-synced target network,
and :class:`QLearner`, the small bundle of network + target + optimizer +
buffer that the agents compose.

The replay buffer stores transitions in preallocated ring arrays so that
minibatch sampling is a single fancy-index gather; the Transition-level
interface on top of it is what the tests exercise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nn import (
    AdamState,
    QNetwork,
    adam_new,
    clone_network,
    forward,
    forward_batch,
    mlp_new,
    td_step,
)

__all__ = [
    "Transition",
    "ArrayBatch",
    "ReplayBuffer",
    "EpsilonSchedule",
    "Hyperparams",
    "QLearner",
    "epsilon_greedy",
    "td_targets",
    "maybe_sync_target",
]


@dataclass(slots=True)
class Transition:
    """One (s, a, r, s', terminal) record, in encoded-state space."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass(slots=True)
class ArrayBatch:
    """A sampled minibatch as stacked arrays (copies, safe to mutate)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions; oldest entries evicted first.

    Storage is allocated on the first push, sized by that transition's state
    length; all subsequent states must match.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.inserted = 0
        self._size = 0
        self._cursor = 0
        self._states: Optional[np.ndarray] = None
        self._actions: Optional[np.ndarray] = None
        self._rewards: Optional[np.ndarray] = None
        self._next_states: Optional[np.ndarray] = None
        self._terminals: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self._size

    def _allocate(self, state_dim: int) -> None:
        self._states = np.zeros((self.capacity, state_dim))
        self._actions = np.zeros(self.capacity, dtype=np.intp)
        self._rewards = np.zeros(self.capacity)
        self._next_states = np.zeros((self.capacity, state_dim))
        self._terminals = np.zeros(self.capacity, dtype=bool)

    def push(self, transition: Transition) -> None:
        if self._states is None:
            self._allocate(len(transition.state))
        cursor = self._cursor
        self._states[cursor] = transition.state
        self._actions[cursor] = transition.action
        self._rewards[cursor] = transition.reward
        self._next_states[cursor] = transition.next_state
        self._terminals[cursor] = transition.terminal
        self._cursor = (cursor + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.inserted += 1

    def _transition_at(self, index: int) -> Transition:
        return Transition(
            self._states[index].copy(),
            int(self._actions[index]),
            float(self._rewards[index]),
            self._next_states[index].copy(),
            bool(self._terminals[index]),
        )

    def sample(
        self, batch_size: int, rng: np.random.Generator
    ) -> Optional[list[Transition]]:
        """Uniform sample with replacement; None (skip signal) when empty."""
        if self._size == 0:
            return None
        idx = rng.integers(0, self._size, size=batch_size)
        return [self._transition_at(i) for i in idx]

    def sample_arrays(
        self, batch_size: int, rng: np.random.Generator
    ) -> Optional[ArrayBatch]:
        """Like :meth:`sample` but as stacked arrays; the training hot path."""
        if self._size == 0:
            return None
        idx = rng.integers(0, self._size, size=batch_size)
        return ArrayBatch(
            self._states[idx],
            self._actions[idx],
            self._rewards[idx],
            self._next_states[idx],
            self._terminals[idx],
        )

    def snapshot(self) -> list[Transition]:
        """Current contents, oldest first."""
        if self._size < self.capacity:
            order = range(self._size)
        else:
            order = [(self._cursor + i) % self.capacity for i in range(self.capacity)]
        return [self._transition_at(i) for i in order]


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear interpolation from start to end over anneal_steps, then flat."""

    start: float
    end: float
    anneal_steps: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.start <= 1.0 and 0.0 <= self.end <= 1.0):
            raise ValueError("epsilon bounds must lie in [0, 1]")
        if self.anneal_steps < 1:
            raise ValueError("anneal_steps must be >= 1")

    def value(self, step: int) -> float:
        frac = min(max(step, 0) / self.anneal_steps, 1.0)
        return self.start + (self.end - self.start) * frac


def epsilon_greedy(
    q_values: np.ndarray, epsilon: float, rng: np.random.Generator
) -> int:
    """Random action with probability epsilon, else lowest-index argmax.

    epsilon <= 0 short-circuits without consuming generator state, so greedy
    evaluation is a pure function of the Q-values.
    """
    n = len(q_values)
    if n == 0:
        raise ValueError("q_values must be nonempty")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(n))
    return int(np.argmax(q_values))


def _targets_from_arrays(
    rewards: np.ndarray,
    next_states: np.ndarray,
    terminals: np.ndarray,
    target_net: QNetwork,
    gamma: float,
) -> np.ndarray:
    targets = rewards.astype(np.float64, copy=True)
    live = ~terminals
    if live.any():
        best_next = forward_batch(target_net, next_states[live]).max(axis=1)
        targets[live] += gamma * best_next
    return targets


def td_targets(
    batch: Sequence[Transition], target_net: QNetwork, gamma: float
) -> np.ndarray:
    """Standard one-step targets: r, plus gamma * max_a Q_target(s') when
    the transition is non-terminal."""
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    next_states = np.stack([t.next_state for t in batch])
    terminals = np.array([t.terminal for t in batch], dtype=bool)
    return _targets_from_arrays(rewards, next_states, terminals, target_net, gamma)


def maybe_sync_target(
    learner: QNetwork, target: QNetwork, step: int, period: int
) -> None:
    """Hard-copy learner params into the target every ``period`` steps."""
    if period < 1:
        raise ValueError("period must be >= 1")
    if step % period == 0:
        if target.dims != learner.dims:
            raise ValueError("target and learner must share dims")
        target.params[:] = learner.params


@dataclass(frozen=True)
class Hyperparams:
    """Training hyperparameters shared by the three agents.

    The invocation budget of 10 is the environment's episode cap; the rest
    are conventional small-scale DQN settings.
    """

    gamma: float = 0.95
    learning_rate: float = 1e-3
    buffer_capacity: int = 50_000
    batch_size: int = 32
    ctrl_eps: EpsilonSchedule = EpsilonSchedule(1.0, 0.05, 20_000)
    meta_eps: EpsilonSchedule = EpsilonSchedule(1.0, 0.05, 50_000)
    target_sync_period: int = 500
    invocation_budget: int = 10
    k_turns: int = 2

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.target_sync_period < 1:
            raise ValueError("target_sync_period must be >= 1")
        if self.invocation_budget < 1:
            raise ValueError("invocation_budget must be >= 1")
        if self.k_turns < 2:
            raise ValueError("k_turns must be >= 2")


class QLearner:
    """One Q-network with its target copy, Adam state, and replay buffer."""

    def __init__(
        self,
        input_dim: int,
        n_actions: int,
        hp: Hyperparams,
        init_rng: np.random.Generator,
    ):
        self.hp = hp
        self.net = mlp_new(input_dim, n_actions, init_rng)
        self.target = clone_network(self.net)
        self.opt: AdamState = adam_new(self.net, lr=hp.learning_rate)
        self.buffer = ReplayBuffer(hp.buffer_capacity)
        self.steps = 0

    def q(self, x: np.ndarray) -> np.ndarray:
        return forward(self.net, x)

    def q_batch(self, xs: np.ndarray) -> np.ndarray:
        return forward_batch(self.net, xs)

    def push(self, transition: Transition) -> None:
        self.buffer.push(transition)

    def train_step(self, rng: np.random.Generator) -> Optional[float]:
        """One minibatch update; None when the buffer is empty (skipped)."""
        batch = self.buffer.sample_arrays(self.hp.batch_size, rng)
        if batch is None:
            return None
        targets = _targets_from_arrays(
            batch.rewards, batch.next_states, batch.terminals, self.target, self.hp.gamma
        )
        loss = td_step(self.net, self.opt, batch.states, batch.actions, targets)
        self.steps += 1
        maybe_sync_target(self.net, self.target, self.steps, self.hp.target_sync_period)
        return loss
