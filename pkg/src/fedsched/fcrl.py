"""Meta-controller guided pairwise negotiation (the FCRL agent).

The meta-controller walks the scheduled agents two at a time, in the order
the environment expects, and picks a constraint window for the active pair.
The two controllers then negotiate inside that window for ``k_turns``
simultaneous communication turns; the last turn's actions are their outputs.
An internal critic pays the pair a shared intrinsic reward of 1 whenever both
actions are valid under the window-constrained databases and correctly
ordered. The meta-controller itself is paid only the terminal environment
reward, under a hard budget of window invocations per episode.

The episode loop is a plain function over Q-value callables so tests can
drive it with hand-built fixtures; :class:`FcrlAgent` wires it to real
networks, replay buffers, and per-invocation minibatch updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dqn import Hyperparams, QLearner, Transition, epsilon_greedy
from .sched_env import EpisodeSpec, extrinsic_reward

__all__ = [
    "POSITION_FIRST",
    "POSITION_SECOND",
    "ConstraintWindow",
    "MetaState",
    "ControllerView",
    "InvocationLog",
    "EpisodeRecord",
    "PairNegotiation",
    "enumerate_windows",
    "encode_controller_state",
    "encode_meta_state",
    "critic",
    "pair_feasible",
    "next_controller_pair",
    "negotiate_pair",
    "run_fcrl_episode",
    "greedy_pair_success_rate",
    "FcrlAgent",
]

POSITION_FIRST = 0
POSITION_SECOND = 1

QFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ConstraintWindow:
    """Contiguous aligned block of slots [start, start + size)."""

    start: int
    size: int

    def mask(self, n_slots: int) -> np.ndarray:
        mask = np.zeros(n_slots, dtype=bool)
        mask[self.start : self.start + self.size] = True
        return mask


def enumerate_windows(n_slots: int) -> list[ConstraintWindow]:
    """All aligned windows of sizes n_slots, n_slots/2, ..., 2.

    Ordered by size descending then start ascending; the position in this
    list is the meta-controller's action index. There are exactly
    ``n_slots - 1`` windows (1 + 2 + ... + n_slots/2).
    """
    if n_slots < 2 or n_slots & (n_slots - 1):
        raise ValueError("n_slots must be a power of two and >= 2")
    windows = []
    size = n_slots
    while size >= 2:
        for start in range(0, n_slots, size):
            windows.append(ConstraintWindow(start, size))
        size //= 2
    return windows


@dataclass
class MetaState:
    """Meta-controller bookkeeping: completed units, accepted times, and the
    window indices already tried for the unit currently being scheduled."""

    done_units: list[int] = field(default_factory=list)
    done_times: list[int] = field(default_factory=list)
    tried: set[int] = field(default_factory=set)
    invocations: int = 0


@dataclass
class ControllerView:
    """One negotiating controller's partial view.

    ``constrained_db`` is the agent's database ANDed with the window mask;
    ``last_comm`` is the partner's previous action, None on the first turn.
    """

    constrained_db: np.ndarray
    position: int
    last_comm: Optional[int] = None


def encode_controller_state(view: ControllerView, n_slots: int) -> np.ndarray:
    """[constrained database | position one-hot (2) | partner action one-hot].

    Length 2 * n_slots + 2; the communication block is all zero on turn 1.
    """
    vec = np.zeros(2 * n_slots + 2)
    vec[:n_slots] = view.constrained_db
    vec[n_slots + view.position] = 1.0
    if view.last_comm is not None:
        vec[n_slots + 2 + view.last_comm] = 1.0
    return vec


def encode_meta_state(state: MetaState, n_slots: int) -> np.ndarray:
    """[latest accepted time one-hot | tried-window multi-hot].

    Length n_slots + (n_slots - 1); all zero at the start of an episode.
    """
    vec = np.zeros(2 * n_slots - 1)
    if state.done_times:
        vec[state.done_times[-1]] = 1.0
    for w in state.tried:
        vec[n_slots + w] = 1.0
    return vec


def critic(
    window: ConstraintWindow,
    db_i: np.ndarray,
    db_j: np.ndarray,
    a_i: int,
    a_j: int,
) -> int:
    """Shared intrinsic reward for a controller pair.

    1 iff both actions are available under the window-constrained databases
    and a_i < a_j; otherwise 0. Previously accepted times are deliberately
    not consulted: cross-pair consistency is the meta-controller's problem.
    """
    db_i = np.asarray(db_i, dtype=bool)
    db_j = np.asarray(db_j, dtype=bool)
    mask = window.mask(len(db_i))
    return _pair_score(db_i & mask, db_j & mask, a_i, a_j)


def _pair_score(cdb_i: np.ndarray, cdb_j: np.ndarray, a_i: int, a_j: int) -> int:
    return int(bool(cdb_i[a_i]) and bool(cdb_j[a_j]) and a_i < a_j)


def pair_feasible(
    window: ConstraintWindow, db_i: np.ndarray, db_j: np.ndarray
) -> bool:
    """True iff some (a_i < a_j) pair is valid under the constrained dbs."""
    mask = window.mask(len(np.asarray(db_i)))
    ci = np.asarray(db_i, dtype=bool) & mask
    cj = np.asarray(db_j, dtype=bool) & mask
    first = np.flatnonzero(ci)
    last = np.flatnonzero(cj)
    return len(first) > 0 and len(last) > 0 and first[0] < last[-1]


def next_controller_pair(state: MetaState, n_scheduled: int) -> int:
    """Index of the first consecutive pair (2p, 2p+1) not yet completed."""
    for p in range(n_scheduled // 2):
        if p not in state.done_units:
            return p
    raise RuntimeError("all controller pairs are done; episode should have ended")


@dataclass
class PairNegotiation:
    """Everything produced by one window invocation of a controller pair."""

    actions: tuple[int, int]
    success: bool
    transitions: list[Transition]
    turn_actions: list[tuple[int, ...]]
    turn_rewards: list[int]


def negotiate_pair(
    ctrl_q: QFunction,
    window_mask: np.ndarray,
    db_i: np.ndarray,
    db_j: np.ndarray,
    k_turns: int,
    eps: float,
    rng: np.random.Generator,
    ctrl_q_batch: Optional[QFunction] = None,
) -> PairNegotiation:
    """Run the simultaneous communication turns for one pair.

    Both controllers act epsilon-greedily from views carrying the partner's
    previous action (zeroed communication on turn 1), the critic scores every
    turn, and only the final turn's transitions are terminal. Success is the
    final turn's critic verdict.

    ``ctrl_q_batch``, when given, evaluates both controllers' states in one
    (2, state_dim) call; it must agree with ``ctrl_q`` row by row.
    """
    n_slots = len(window_mask)
    cdb_i = np.asarray(db_i, dtype=bool) & window_mask
    cdb_j = np.asarray(db_j, dtype=bool) & window_mask
    view_i = ControllerView(cdb_i, POSITION_FIRST)
    view_j = ControllerView(cdb_j, POSITION_SECOND)
    transitions: list[Transition] = []
    turn_actions: list[tuple[int, ...]] = []
    turn_rewards: list[int] = []
    a_i = a_j = 0
    for turn in range(k_turns):
        s_i = encode_controller_state(view_i, n_slots)
        s_j = encode_controller_state(view_j, n_slots)
        if ctrl_q_batch is not None:
            q_both = ctrl_q_batch(np.stack((s_i, s_j)))
            q_i, q_j = q_both[0], q_both[1]
        else:
            q_i, q_j = ctrl_q(s_i), ctrl_q(s_j)
        a_i = epsilon_greedy(q_i, eps, rng)
        a_j = epsilon_greedy(q_j, eps, rng)
        view_i = ControllerView(cdb_i, POSITION_FIRST, last_comm=a_j)
        view_j = ControllerView(cdb_j, POSITION_SECOND, last_comm=a_i)
        reward = _pair_score(cdb_i, cdb_j, a_i, a_j)
        terminal = turn == k_turns - 1
        transitions.append(
            Transition(s_i, a_i, float(reward), encode_controller_state(view_i, n_slots), terminal)
        )
        transitions.append(
            Transition(s_j, a_j, float(reward), encode_controller_state(view_j, n_slots), terminal)
        )
        turn_actions.append((a_i, a_j))
        turn_rewards.append(reward)
    return PairNegotiation(
        actions=(a_i, a_j),
        success=turn_rewards[-1] > 0,
        transitions=transitions,
        turn_actions=turn_actions,
        turn_rewards=turn_rewards,
    )


@dataclass
class InvocationLog:
    """One meta-controller invocation: which unit, which window, and what the
    controllers did on every turn. ``unit`` is a pair index for negotiating
    agents and a single agent index for the one-at-a-time hierarchy."""

    unit: int
    window: int
    turn_actions: list[tuple[int, ...]]
    turn_rewards: list[int]
    success: bool


@dataclass
class EpisodeRecord:
    """Outcome and full trace of one episode, serializable to JSON lines."""

    algorithm: str
    schedule: Optional[tuple[int, ...]]
    extrinsic: int
    invocation_count: int
    invocations: list[InvocationLog] = field(default_factory=list)
    turn_actions: Optional[list[tuple[int, ...]]] = None

    def intrinsic_success_rate(self) -> float:
        """Fraction of invocations whose final turn satisfied the critic;
        0.0 for agents without a critic."""
        if not self.invocations:
            return 0.0
        return sum(1 for log in self.invocations if log.success) / len(self.invocations)

    def to_json_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "schedule": list(self.schedule) if self.schedule is not None else None,
            "extrinsic_reward": self.extrinsic,
            "invocation_count": self.invocation_count,
            "invocations": [
                {
                    "unit": log.unit,
                    "window": log.window,
                    "turn_actions": [list(a) for a in log.turn_actions],
                    "turn_rewards": list(log.turn_rewards),
                    "success": log.success,
                }
                for log in self.invocations
            ],
            "turn_actions": [list(a) for a in self.turn_actions]
            if self.turn_actions is not None
            else None,
        }


InvocationSink = Callable[[Transition, Sequence[Transition]], None]


def run_fcrl_episode(
    episode: EpisodeSpec,
    meta_q: QFunction,
    ctrl_q: QFunction,
    windows: Sequence[ConstraintWindow],
    *,
    k_turns: int,
    budget: int,
    meta_eps: float,
    ctrl_eps: float,
    rng: np.random.Generator,
    on_invocation: Optional[InvocationSink] = None,
    ctrl_q_batch: Optional[QFunction] = None,
) -> EpisodeRecord:
    """Play one full meta-controller episode.

    Loop until every pair is done or the invocation budget is spent: pick the
    next pair, choose a window epsilon-greedily from ``meta_q``, negotiate,
    then book-keep — success appends the pair's times and clears the tried
    set, failure records the window as tried and the same pair is retried.
    The meta transition (reward 0 until terminal, then the environment reward
    over the assembled schedule, 0 if incomplete) and the pair's controller
    transitions are handed to ``on_invocation`` after every invocation;
    passing None (evaluation) stores and updates nothing.
    """
    if k_turns < 2:
        raise ValueError("k_turns must be >= 2")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    n_slots = episode.n_slots
    n_units = episode.n_scheduled // 2
    masks = [w.mask(n_slots) for w in windows]
    state = MetaState()
    logs: list[InvocationLog] = []
    schedule: Optional[tuple[int, ...]] = None
    reward = 0
    while True:
        pair = next_controller_pair(state, episode.n_scheduled)
        s_meta = encode_meta_state(state, n_slots)
        window_idx = epsilon_greedy(meta_q(s_meta), meta_eps, rng)
        outcome = negotiate_pair(
            ctrl_q,
            masks[window_idx],
            episode.databases[2 * pair].slots,
            episode.databases[2 * pair + 1].slots,
            k_turns,
            ctrl_eps,
            rng,
            ctrl_q_batch=ctrl_q_batch,
        )
        if outcome.success:
            state.done_units.append(pair)
            state.done_times.extend(outcome.actions)
            state.tried.clear()
        else:
            state.tried.add(window_idx)
        state.invocations += 1

        complete = len(state.done_units) == n_units
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
            InvocationLog(pair, window_idx, outcome.turn_actions, outcome.turn_rewards, outcome.success)
        )
        if on_invocation is not None:
            on_invocation(meta_transition, outcome.transitions)
        if terminal:
            return EpisodeRecord("fcrl", schedule, reward, state.invocations, logs)


def greedy_pair_success_rate(
    ctrl_q: QFunction,
    windows: Sequence[ConstraintWindow],
    n_slots: int,
    rng: np.random.Generator,
    n_instances: int = 1000,
    availability_prob: float = 0.5,
    k_turns: int = 2,
) -> float:
    """Critic pass rate of the greedy controllers on feasible random
    (window, databases) instances; used to judge pretraining."""
    masks = [w.mask(n_slots) for w in windows]
    successes = 0
    for _ in range(n_instances):
        for _ in range(10_000):
            idx = int(rng.integers(len(windows)))
            dbs = rng.random((2, n_slots)) < availability_prob
            if pair_feasible(windows[idx], dbs[0], dbs[1]):
                break
        else:
            raise RuntimeError("could not sample a feasible pair instance")
        outcome = negotiate_pair(ctrl_q, masks[idx], dbs[0], dbs[1], k_turns, 0.0, rng)
        successes += outcome.success
    return successes / n_instances


class FcrlAgent:
    """Networks, buffers, and schedules behind :func:`run_fcrl_episode`.

    The meta-controller maps (latest time, tried windows) to window values;
    the shared controller network maps (constrained db, position, partner
    action) to slot values. Both learn with one minibatch per invocation.
    """

    algorithm = "fcrl"

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
        # Initialization order (meta, then controller) is part of run
        # reproducibility: both draw from the same init stream.
        self.meta = QLearner(2 * n_slots - 1, n_slots - 1, hp, init_rng)
        self.ctrl = QLearner(2 * n_slots + 2, n_slots, hp, init_rng)
        self._replay_rng = replay_rng
        self.train_episodes = 0
        self.ctrl_episodes = 0

    def run_episode(
        self, episode: EpisodeSpec, rng: np.random.Generator, train: bool
    ) -> EpisodeRecord:
        if train:
            record = run_fcrl_episode(
                episode,
                self.meta.q,
                self.ctrl.q,
                self.windows,
                k_turns=self.hp.k_turns,
                budget=self.hp.invocation_budget,
                meta_eps=self.hp.meta_eps.value(self.train_episodes),
                ctrl_eps=self.hp.ctrl_eps.value(self.ctrl_episodes),
                rng=rng,
                on_invocation=self._learn,
                ctrl_q_batch=self.ctrl.q_batch,
            )
            self.train_episodes += 1
            self.ctrl_episodes += 1
            return record
        return run_fcrl_episode(
            episode,
            self.meta.q,
            self.ctrl.q,
            self.windows,
            k_turns=self.hp.k_turns,
            budget=self.hp.invocation_budget,
            meta_eps=0.0,
            ctrl_eps=0.0,
            rng=rng,
            ctrl_q_batch=self.ctrl.q_batch,
        )

    def _learn(self, meta_transition: Transition, ctrl_transitions) -> None:
        for transition in ctrl_transitions:
            self.ctrl.push(transition)
        self.ctrl.train_step(self._replay_rng)
        self.meta.push(meta_transition)
        self.meta.train_step(self._replay_rng)

    def pretrain(
        self,
        rng: np.random.Generator,
        n_episodes: int,
        availability_prob: float = 0.5,
    ) -> None:
        """Warm-start the shared controller network by negotiating under
        uniformly random windows and databases, against the critic only.

        Uses only the controller buffer; the meta-controller is untouched.
        Controller epsilon keeps annealing across pretraining and joint
        training (these are all controller training episodes).
        """
        masks = [w.mask(self.n_slots) for w in self.windows]
        for _ in range(n_episodes):
            eps = self.hp.ctrl_eps.value(self.ctrl_episodes)
            idx = int(rng.integers(len(self.windows)))
            dbs = rng.random((2, self.n_slots)) < availability_prob
            outcome = negotiate_pair(
                self.ctrl.q,
                masks[idx],
                dbs[0],
                dbs[1],
                self.hp.k_turns,
                eps,
                rng,
                ctrl_q_batch=self.ctrl.q_batch,
            )
            for transition in outcome.transitions:
                self.ctrl.push(transition)
            self.ctrl.train_step(self._replay_rng)
            self.ctrl_episodes += 1
