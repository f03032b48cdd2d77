"""Baseline agents: flat multi-agent communication and one-at-a-time hierarchy.

MARL drops the meta-controller: all scheduled agents communicate at once,
each seeing its own database, its position in the overall order, and the
average of the other agents' previous one-hot outputs. The only learning
signal is the shared terminal environment reward; there is no critic and no
constraint window.

HRL drops the communication: the meta-controller (identical state and action
space to the negotiating variant) constrains one agent at a time, and that
agent must emit a slot valid under its constrained database. Its critic
checks validity only — a single action has no pair order — so sequencing
falls entirely on the meta-controller.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .dqn import Hyperparams, QLearner, Transition, epsilon_greedy
from .fcrl import (
    ConstraintWindow,
    EpisodeRecord,
    InvocationLog,
    MetaState,
    encode_meta_state,
    enumerate_windows,
)
from .sched_env import EpisodeSpec, extrinsic_reward

__all__ = [
    "MarlView",
    "HrlView",
    "encode_marl_state",
    "encode_hrl_state",
    "run_marl_episode",
    "run_hrl_episode",
    "MarlAgent",
    "HrlAgent",
]

QFunction = Callable[[np.ndarray], np.ndarray]


@dataclass
class MarlView:
    """One flat agent's view: own (unconstrained) database, position among
    the m scheduled agents, and the mean of the others' previous one-hots."""

    database: np.ndarray
    position: int
    comm_avg: np.ndarray


def encode_marl_state(view: MarlView, n_scheduled: int) -> np.ndarray:
    """[database | position one-hot (m) | averaged communication]."""
    n_slots = len(view.database)
    vec = np.zeros(2 * n_slots + n_scheduled)
    vec[:n_slots] = view.database
    vec[n_slots + view.position] = 1.0
    vec[n_slots + n_scheduled :] = view.comm_avg
    return vec


@dataclass
class HrlView:
    """A constrained single agent sees only its windowed database."""

    constrained_db: np.ndarray


def encode_hrl_state(view: HrlView) -> np.ndarray:
    return np.asarray(view.constrained_db, dtype=np.float64).copy()


TurnSink = Callable[[Sequence[Transition]], None]


def run_marl_episode(
    episode: EpisodeSpec,
    ctrl_q: QFunction,
    *,
    k_turns: int,
    eps: float,
    rng: np.random.Generator,
    on_turn: Optional[TurnSink] = None,
    ctrl_q_batch: Optional[QFunction] = None,
) -> EpisodeRecord:
    """All m agents act simultaneously for k_turns; the last turn's actions
    are the schedule and its environment reward is shared by every agent's
    terminal transition (earlier turns pay 0).

    ``on_turn`` receives the m transitions after each turn; training hooks
    one minibatch update per turn there. ``ctrl_q_batch`` optionally
    evaluates all m states per turn in one call.
    """
    if k_turns < 2:
        raise ValueError("k_turns must be >= 2")
    m = episode.n_scheduled
    n_slots = episode.n_slots
    databases = [db.slots for db in episode.databases]
    comm = np.zeros((m, n_slots))
    turn_log: list[tuple[int, ...]] = []
    reward = 0
    actions: list[int] = []
    for turn in range(k_turns):
        states = [
            encode_marl_state(MarlView(databases[i], i, comm[i]), m) for i in range(m)
        ]
        if ctrl_q_batch is not None:
            q_all = ctrl_q_batch(np.stack(states))
            actions = [epsilon_greedy(q_all[i], eps, rng) for i in range(m)]
        else:
            actions = [epsilon_greedy(ctrl_q(states[i]), eps, rng) for i in range(m)]
        one_hots = np.zeros((m, n_slots))
        one_hots[np.arange(m), actions] = 1.0
        totals = one_hots.sum(axis=0)
        comm = (totals - one_hots) / (m - 1)
        next_states = [
            encode_marl_state(MarlView(databases[i], i, comm[i]), m) for i in range(m)
        ]
        terminal = turn == k_turns - 1
        if terminal:
            reward = extrinsic_reward(episode, actions)
        transitions = [
            Transition(states[i], actions[i], float(reward), next_states[i], terminal)
            for i in range(m)
        ]
        turn_log.append(tuple(actions))
        if on_turn is not None:
            on_turn(transitions)
    return EpisodeRecord("marl", tuple(actions), reward, 0, [], turn_actions=turn_log)


InvocationSink = Callable[[Transition, Sequence[Transition]], None]


def _next_agent(state: MetaState, n_scheduled: int) -> int:
    for i in range(n_scheduled):
        if i not in state.done_units:
            return i
    raise RuntimeError("all agents are done; episode should have ended")


def run_hrl_episode(
    episode: EpisodeSpec,
    meta_q: QFunction,
    ctrl_q: QFunction,
    windows: Sequence[ConstraintWindow],
    *,
    budget: int,
    meta_eps: float,
    ctrl_eps: float,
    rng: np.random.Generator,
    on_invocation: Optional[InvocationSink] = None,
) -> EpisodeRecord:
    """Meta-controller constrains one agent at a time, in required order.

    The single controller transition per invocation is terminal; intrinsic
    reward is 1 iff the emitted slot is available under the constrained
    database. Failure adds the window to the tried set and the same agent is
    retried; the global invocation budget and the terminal environment
    reward work exactly as in the negotiating agent.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    n_slots = episode.n_slots
    m = episode.n_scheduled
    masks = [w.mask(n_slots) for w in windows]
    state = MetaState()
    logs: list[InvocationLog] = []
    schedule: Optional[tuple[int, ...]] = None
    reward = 0
    while True:
        agent = _next_agent(state, m)
        s_meta = encode_meta_state(state, n_slots)
        window_idx = epsilon_greedy(meta_q(s_meta), meta_eps, rng)
        constrained = episode.databases[agent].slots & masks[window_idx]
        s_ctrl = encode_hrl_state(HrlView(constrained))
        action = epsilon_greedy(ctrl_q(s_ctrl), ctrl_eps, rng)
        intrinsic = int(bool(constrained[action]))
        ctrl_transition = Transition(
            s_ctrl, action, float(intrinsic), s_ctrl.copy(), True
        )
        if intrinsic:
            state.done_units.append(agent)
            state.done_times.append(action)
            state.tried.clear()
        else:
            state.tried.add(window_idx)
        state.invocations += 1

        complete = len(state.done_units) == m
        terminal = complete or state.invocations >= budget
        if terminal and complete:
            schedule = tuple(state.done_times)
            reward = extrinsic_reward(episode, schedule)
        meta_transition = Transition(
            s_meta,
            window_idx,
            float(reward if terminal else 0),
            encode_meta_state(state, n_slots),
            terminal,
        )
        logs.append(
            InvocationLog(agent, window_idx, [(action,)], [intrinsic], bool(intrinsic))
        )
        if on_invocation is not None:
            on_invocation(meta_transition, [ctrl_transition])
        if terminal:
            return EpisodeRecord("hrl", schedule, reward, state.invocations, logs)


class MarlAgent:
    """Shared-weight flat agents; one network over (db, position, comm)."""

    algorithm = "marl"

    def __init__(
        self,
        n_slots: int,
        n_scheduled: int,
        hp: Hyperparams,
        init_rng: np.random.Generator,
        replay_rng: np.random.Generator,
    ):
        self.n_slots = n_slots
        self.n_scheduled = n_scheduled
        self.hp = hp
        self.ctrl = QLearner(2 * n_slots + n_scheduled, n_slots, hp, init_rng)
        self._replay_rng = replay_rng
        self.train_episodes = 0

    def run_episode(
        self, episode: EpisodeSpec, rng: np.random.Generator, train: bool
    ) -> EpisodeRecord:
        if train:
            record = run_marl_episode(
                episode,
                self.ctrl.q,
                k_turns=self.hp.k_turns,
                eps=self.hp.ctrl_eps.value(self.train_episodes),
                rng=rng,
                on_turn=self._learn,
                ctrl_q_batch=self.ctrl.q_batch,
            )
            self.train_episodes += 1
            return record
        return run_marl_episode(
            episode,
            self.ctrl.q,
            k_turns=self.hp.k_turns,
            eps=0.0,
            rng=rng,
            ctrl_q_batch=self.ctrl.q_batch,
        )

    def _learn(self, transitions) -> None:
        for transition in transitions:
            self.ctrl.push(transition)
        self.ctrl.train_step(self._replay_rng)


class HrlAgent:
    """Meta-controller plus a non-communicating single-slot controller."""

    algorithm = "hrl"

    def __init__(
        self,
        n_slots: int,
        hp: Hyperparams,
        init_rng: np.random.Generator,
        replay_rng: np.random.Generator,
    ):
        self.n_slots = n_slots
        self.hp = hp
        self.windows = enumerate_windows(n_slots)
        self.meta = QLearner(2 * n_slots - 1, n_slots - 1, hp, init_rng)
        self.ctrl = QLearner(n_slots, n_slots, hp, init_rng)
        self._replay_rng = replay_rng
        self.train_episodes = 0

    def run_episode(
        self, episode: EpisodeSpec, rng: np.random.Generator, train: bool
    ) -> EpisodeRecord:
        if train:
            record = run_hrl_episode(
                episode,
                self.meta.q,
                self.ctrl.q,
                self.windows,
                budget=self.hp.invocation_budget,
                meta_eps=self.hp.meta_eps.value(self.train_episodes),
                ctrl_eps=self.hp.ctrl_eps.value(self.train_episodes),
                rng=rng,
                on_invocation=self._learn,
            )
            self.train_episodes += 1
            return record
        return run_hrl_episode(
            episode,
            self.meta.q,
            self.ctrl.q,
            self.windows,
            budget=self.hp.invocation_budget,
            meta_eps=0.0,
            ctrl_eps=0.0,
            rng=rng,
        )

    def _learn(self, meta_transition: Transition, ctrl_transitions) -> None:
        for transition in ctrl_transitions:
            self.ctrl.push(transition)
        self.ctrl.train_step(self._replay_rng)
        self.meta.push(meta_transition)
        self.meta.train_step(self._replay_rng)
