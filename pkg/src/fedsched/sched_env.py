"""Distributed slot-scheduling environment with exact oracles.

``n_agents`` agents each hold a private availability bit vector over
``n_slots`` time slots. An episode draws ``n_scheduled`` of them in a required
order; every drawn agent must output one slot so that the chosen slots are
strictly increasing along the order and each agent's slot is available to it.
The environment pays a single terminal reward of 1 for a consistent schedule
and 0 otherwise.

The module also provides exact feasibility and counting oracles
(:func:`is_feasible`, :func:`count_solutions`) used for instance filtering,
the ``oracle`` CLI subcommand, and as independent references in tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Database",
    "EnvConfig",
    "EpisodeSpec",
    "Schedule",
    "FeasibilitySearchError",
    "new_episode",
    "extrinsic_reward",
    "is_feasible",
    "count_solutions",
    "databases_to_text",
    "databases_from_text",
]

# A schedule is one action per scheduled agent, each in [0, n_slots).
Schedule = Sequence[int]


class FeasibilitySearchError(RuntimeError):
    """No feasible instance found within the resample budget.

    Signals a misconfigured (n_slots, n_scheduled, availability_prob)
    combination rather than bad luck.
    """


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


@dataclass(frozen=True)
class Database:
    """Availability bit vector of one agent: ``slots[t]`` is True iff time
    slot ``t`` is available. Length must be a power of two, at least 2."""

    slots: np.ndarray

    def __post_init__(self) -> None:
        slots = np.asarray(self.slots, dtype=bool)
        if slots.ndim != 1:
            raise ValueError("database slots must be a 1-D boolean sequence")
        if not _is_power_of_two(len(slots)) or len(slots) < 2:
            raise ValueError("database length must be a power of two and >= 2")
        object.__setattr__(self, "slots", slots)

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    @classmethod
    def from_string(cls, bits: str) -> "Database":
        """Parse a 0/1 string, slot 0 first."""
        if not bits or any(c not in "01" for c in bits):
            raise ValueError(f"database string must be nonempty 0/1, got {bits!r}")
        return cls(np.array([c == "1" for c in bits]))

    @classmethod
    def from_indices(cls, indices: Iterable[int], n_slots: int) -> "Database":
        """Build a database that is available exactly at ``indices``."""
        slots = np.zeros(n_slots, dtype=bool)
        for i in indices:
            slots[i] = True
        return cls(slots)

    def to_string(self) -> str:
        return "".join("1" if s else "0" for s in self.slots)


@dataclass(frozen=True)
class EnvConfig:
    """Problem-size and sampling parameters for episode generation.

    ``n_scheduled`` must be even: the negotiation agents pair scheduled
    agents consecutively and no pairing rule is defined for odd counts.
    """

    n_agents: int
    n_slots: int
    n_scheduled: int
    availability_prob: float = 0.5
    ensure_feasible: bool = True

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")
        if not _is_power_of_two(self.n_slots) or self.n_slots < 2:
            raise ValueError("n_slots must be a power of two and >= 2")
        if self.n_scheduled % 2 != 0:
            raise ValueError("n_scheduled must be even")
        if not 2 <= self.n_scheduled <= self.n_agents:
            raise ValueError("n_scheduled must be within [2, n_agents]")
        if self.n_slots < self.n_scheduled:
            raise ValueError("n_slots must be >= n_scheduled")
        if not 0.0 < self.availability_prob <= 1.0:
            raise ValueError("availability_prob must be in (0, 1]")


@dataclass(frozen=True)
class EpisodeSpec:
    """One scheduling instance: the required agent order and their databases.

    ``databases[i]`` belongs to the i-th agent in the required order. Agent
    ids are carried for logging only; no agent policy ever sees them.
    """

    agent_ids: tuple[int, ...]
    databases: tuple[Database, ...]

    def __post_init__(self) -> None:
        if len(set(self.agent_ids)) != len(self.agent_ids):
            raise ValueError("agent_ids must be pairwise distinct")
        if len(self.agent_ids) != len(self.databases):
            raise ValueError("agent_ids and databases must have equal length")

    @property
    def n_scheduled(self) -> int:
        return len(self.agent_ids)

    @property
    def n_slots(self) -> int:
        return self.databases[0].n_slots


def new_episode(
    config: EnvConfig,
    rng: np.random.Generator,
    max_resamples: int = 10_000,
) -> EpisodeSpec:
    """Sample a fresh scheduling instance.

    Draws ``n_scheduled`` distinct agents uniformly without replacement and
    i.i.d. Bernoulli(availability_prob) databases. With ``ensure_feasible``
    the whole database set is rejection-resampled (agent ids kept) until
    :func:`is_feasible` holds; the optimal policy value is then exactly 1.

    Deterministic given the generator state.
    """
    ids = rng.choice(config.n_agents, size=config.n_scheduled, replace=False)
    agent_ids = tuple(int(i) for i in ids)
    for _ in range(max_resamples):
        bits = rng.random((config.n_scheduled, config.n_slots)) < config.availability_prob
        databases = tuple(Database(row) for row in bits)
        if not config.ensure_feasible or is_feasible(databases):
            return EpisodeSpec(agent_ids, databases)
    raise FeasibilitySearchError(
        f"no feasible instance in {max_resamples} resamples for "
        f"n_slots={config.n_slots}, n_scheduled={config.n_scheduled}, "
        f"availability_prob={config.availability_prob}"
    )


def extrinsic_reward(episode: EpisodeSpec, schedule: Schedule) -> int:
    """Terminal environment reward: 1 iff the schedule is strictly increasing
    and every action is an available slot of its agent, else 0.

    Depends only on the databases and actions, never on agent identities.
    """
    if len(schedule) != episode.n_scheduled:
        raise ValueError(
            f"schedule length {len(schedule)} != n_scheduled {episode.n_scheduled}"
        )
    previous = -1
    for db, action in zip(episode.databases, schedule):
        action = int(action)
        if not 0 <= action < db.n_slots:
            raise ValueError(f"action {action} out of range [0, {db.n_slots})")
        if action <= previous or not db.slots[action]:
            return 0
        previous = action
    return 1


def is_feasible(databases: Sequence[Database]) -> bool:
    """Exact feasibility of a database sequence.

    Greedy scan: assign each agent the smallest available slot strictly
    greater than the previous assignment. Taking the smallest valid slot
    never removes options from later agents, so the scan succeeds iff some
    strictly increasing assignment exists.
    """
    _check_database_seq(databases)
    previous = -1
    for db in databases:
        slot = previous + 1
        n = db.n_slots
        while slot < n and not db.slots[slot]:
            slot += 1
        if slot >= n:
            return False
        previous = slot
    return True


def count_solutions(databases: Sequence[Database]) -> int:
    """Exact number of valid strictly increasing assignments.

    Dynamic program over (agent, last chosen slot); equivalent to exhaustive
    enumeration of all ``n_slots ** len(databases)`` action tuples.
    """
    _check_database_seq(databases)
    n = databases[0].n_slots
    # ways[t]: assignments of the agents seen so far whose last pick is slot t
    ways = [1 if databases[0].slots[t] else 0 for t in range(n)]
    for db in databases[1:]:
        acc = 0
        new = [0] * n
        for t in range(n):
            if t > 0:
                acc += ways[t - 1]
            if db.slots[t]:
                new[t] = acc
        ways = new
    return sum(ways)


def _check_database_seq(databases: Sequence[Database]) -> None:
    if not databases:
        raise ValueError("database sequence must be nonempty")
    n = databases[0].n_slots
    if any(db.n_slots != n for db in databases):
        raise ValueError("databases must all have the same length")


def databases_to_text(databases: Sequence[Database]) -> str:
    """One 0/1 line per database, in agent order."""
    return "\n".join(db.to_string() for db in databases) + "\n"


def databases_from_text(text: str) -> tuple[Database, ...]:
    """Inverse of :func:`databases_to_text`; blank lines are ignored."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("no databases found in text")
    databases = tuple(Database.from_string(line) for line in lines)
    _check_database_seq(databases)
    return databases
