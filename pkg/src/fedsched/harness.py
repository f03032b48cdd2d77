"""Experiment orchestration: config, seeded runs, and metrics persistence.

A run alternates training blocks (epsilon per schedule, learning on) with
evaluation blocks (greedy, update-free) of ``block_size`` episodes each and
emits one :class:`MetricsRow` per (seed, block, phase).

Reproducibility contract: every seed derives five independent generator
streams (environment, initialization, exploration, replay sampling,
pretraining). The environment stream depends only on the seed and is
consumed once per episode, so for a shared seed all three algorithms face
the identical episode sequence.
"""

from __future__ import annotations

import csv
import logging
import multiprocessing
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import HrlAgent, MarlAgent
from .dqn import EpsilonSchedule, Hyperparams
from .fcrl import EpisodeRecord, FcrlAgent
from .nn import DivergenceError
from .sched_env import EnvConfig, EpisodeSpec, new_episode

__all__ = [
    "ALGORITHMS",
    "ConfigError",
    "ExperimentConfig",
    "MetricsRow",
    "METRICS_HEADER",
    "load_config",
    "build_agent",
    "seed_streams",
    "run_experiment",
    "write_metrics",
    "read_metrics",
]

logger = logging.getLogger(__name__)

ALGORITHMS = ("fcrl", "marl", "hrl")

METRICS_HEADER = (
    "seed",
    "block",
    "phase",
    "episodes",
    "mean_extrinsic_reward",
    "mean_invocations",
    "mean_intrinsic_success",
    "seconds",
)


class ConfigError(ValueError):
    """Invalid configuration file or flag values."""


@dataclass
class ExperimentConfig:
    """Everything a run needs; defaults mirror the standard setup
    (20 agents, 8 slots, 2 scheduled, feasible instances, 5 seeds)."""

    env: EnvConfig = field(default_factory=lambda: EnvConfig(20, 8, 2))
    algorithm: str = "fcrl"
    hp: Hyperparams = field(default_factory=Hyperparams)
    block_size: int = 1000
    total_blocks: int = 100
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    pretrain: bool = False
    pretrain_episodes: int = 20_000

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algo must be one of {'|'.join(ALGORITHMS)}")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        if self.total_blocks < 1:
            raise ConfigError("total_blocks must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.pretrain_episodes < 0:
            raise ConfigError("pretrain_episodes must be >= 0")
        if self.pretrain and self.algorithm != "fcrl":
            raise ConfigError("pretrain is only supported for algo = fcrl")


@dataclass(frozen=True)
class MetricsRow:
    """Per-(seed, block, phase) aggregates; phase is train, eval, or failed
    (a run aborted by divergence, excluded from curves)."""

    seed: int
    block: int
    phase: str
    episodes: int
    mean_extrinsic_reward: float
    mean_invocations: float
    mean_intrinsic_success: float
    seconds: float


# Config-file / flag surface: key -> caster. Casters accept both the raw
# file strings and already-typed flag values.
def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    lowered = str(raw).strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_seeds(raw) -> tuple[int, ...]:
    if isinstance(raw, (tuple, list)):
        return tuple(int(s) for s in raw)
    parts = [p.strip() for p in str(raw).split(",") if p.strip()]
    if not parts:
        raise ValueError("empty seed list")
    return tuple(int(p) for p in parts)


_CONFIG_CASTERS: dict[str, Callable] = {
    "algo": str,
    "N": int,
    "B": int,
    "m": int,
    "availability_prob": float,
    "ensure_feasible": _parse_bool,
    "k_turns": int,
    "gamma": float,
    "learning_rate": float,
    "buffer_capacity": int,
    "batch_size": int,
    "ctrl_eps_start": float,
    "ctrl_eps_end": float,
    "ctrl_eps_anneal": int,
    "meta_eps_start": float,
    "meta_eps_end": float,
    "meta_eps_anneal": int,
    "target_sync_period": int,
    "invocation_budget": int,
    "block_size": int,
    "total_blocks": int,
    "seeds": _parse_seeds,
    "pretrain": _parse_bool,
    "pretrain_episodes": int,
}


def _parse_config_file(path) -> dict:
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = stripped.partition("=")
            values[key.strip()] = raw.strip()
    return values


def load_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build a validated config from an optional flat key=value file plus
    flag overrides (overrides win). Unknown keys are rejected by name."""
    raw: dict = {}
    if path is not None:
        raw.update(_parse_config_file(path))
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    values: dict = {}
    for key, value in raw.items():
        caster = _CONFIG_CASTERS.get(key)
        if caster is None:
            raise ConfigError(f"unknown config key: {key}")
        try:
            values[key] = caster(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid value for {key}: {exc}") from exc

    try:
        env = EnvConfig(
            n_agents=values.get("N", 20),
            n_slots=values.get("B", 8),
            n_scheduled=values.get("m", 2),
            availability_prob=values.get("availability_prob", 0.5),
            ensure_feasible=values.get("ensure_feasible", True),
        )
        defaults = Hyperparams()
        hp = Hyperparams(
            gamma=values.get("gamma", defaults.gamma),
            learning_rate=values.get("learning_rate", defaults.learning_rate),
            buffer_capacity=values.get("buffer_capacity", defaults.buffer_capacity),
            batch_size=values.get("batch_size", defaults.batch_size),
            ctrl_eps=EpsilonSchedule(
                values.get("ctrl_eps_start", defaults.ctrl_eps.start),
                values.get("ctrl_eps_end", defaults.ctrl_eps.end),
                values.get("ctrl_eps_anneal", defaults.ctrl_eps.anneal_steps),
            ),
            meta_eps=EpsilonSchedule(
                values.get("meta_eps_start", defaults.meta_eps.start),
                values.get("meta_eps_end", defaults.meta_eps.end),
                values.get("meta_eps_anneal", defaults.meta_eps.anneal_steps),
            ),
            target_sync_period=values.get("target_sync_period", defaults.target_sync_period),
            invocation_budget=values.get("invocation_budget", defaults.invocation_budget),
            k_turns=values.get("k_turns", defaults.k_turns),
        )
        return ExperimentConfig(
            env=env,
            algorithm=values.get("algo", "fcrl"),
            hp=hp,
            block_size=values.get("block_size", 1000),
            total_blocks=values.get("total_blocks", 100),
            seeds=values.get("seeds", (0, 1, 2, 3, 4)),
            pretrain=values.get("pretrain", False),
            pretrain_episodes=values.get("pretrain_episodes", 20_000),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# Named sub-streams derived from one run seed.
_STREAM_ENV = 0
_STREAM_INIT = 1
_STREAM_EXPLORE = 2
_STREAM_REPLAY = 3
_STREAM_PRETRAIN = 4


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent, deterministic generators for one run seed."""

    def stream(index: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))

    return {
        "env": stream(_STREAM_ENV),
        "init": stream(_STREAM_INIT),
        "explore": stream(_STREAM_EXPLORE),
        "replay": stream(_STREAM_REPLAY),
        "pretrain": stream(_STREAM_PRETRAIN),
    }


def build_agent(config: ExperimentConfig, init_rng, replay_rng):
    if config.algorithm == "fcrl":
        return FcrlAgent(config.env.n_slots, config.hp, init_rng, replay_rng)
    if config.algorithm == "marl":
        return MarlAgent(
            config.env.n_slots, config.env.n_scheduled, config.hp, init_rng, replay_rng
        )
    if config.algorithm == "hrl":
        return HrlAgent(config.env.n_slots, config.hp, init_rng, replay_rng)
    raise ConfigError(f"unknown algorithm {config.algorithm!r}")


EpisodeSink = Callable[[int, int, str, int, EpisodeSpec, EpisodeRecord], None]


def _run_single_seed(
    config: ExperimentConfig, seed: int, episode_sink: Optional[EpisodeSink] = None
) -> list[MetricsRow]:
    streams = seed_streams(seed)
    agent = build_agent(config, streams["init"], streams["replay"])
    rows: list[MetricsRow] = []
    block = 0
    phase = "train"
    episodes_done = 0
    phase_start = time.perf_counter()
    try:
        if config.pretrain and config.algorithm == "fcrl":
            agent.pretrain(
                streams["pretrain"],
                config.pretrain_episodes,
                availability_prob=config.env.availability_prob,
            )
        for block in range(config.total_blocks):
            for phase in ("train", "eval"):
                phase_start = time.perf_counter()
                episodes_done = 0
                reward_sum = 0.0
                invocation_sum = 0.0
                intrinsic_sum = 0.0
                for index in range(config.block_size):
                    spec = new_episode(config.env, streams["env"])
                    record = agent.run_episode(
                        spec, streams["explore"], train=phase == "train"
                    )
                    episodes_done += 1
                    reward_sum += record.extrinsic
                    invocation_sum += record.invocation_count
                    intrinsic_sum += record.intrinsic_success_rate()
                    if episode_sink is not None:
                        episode_sink(seed, block, phase, index, spec, record)
                rows.append(
                    MetricsRow(
                        seed=seed,
                        block=block,
                        phase=phase,
                        episodes=episodes_done,
                        mean_extrinsic_reward=reward_sum / episodes_done,
                        mean_invocations=invocation_sum / episodes_done,
                        mean_intrinsic_success=intrinsic_sum / episodes_done,
                        seconds=time.perf_counter() - phase_start,
                    )
                )
    except DivergenceError as exc:
        logger.warning("seed %d diverged during %s block %d: %s", seed, phase, block, exc)
        rows.append(
            MetricsRow(
                seed=seed,
                block=block,
                phase="failed",
                episodes=episodes_done,
                mean_extrinsic_reward=0.0,
                mean_invocations=0.0,
                mean_intrinsic_success=0.0,
                seconds=time.perf_counter() - phase_start,
            )
        )
    return rows


def run_experiment(
    config: ExperimentConfig,
    n_workers: int = 1,
    episode_sink: Optional[EpisodeSink] = None,
) -> list[MetricsRow]:
    """Run every seed and concatenate rows in seed order.

    Seeds are independent, so ``n_workers > 1`` runs them in parallel
    processes with identical results; an episode sink requires the
    sequential path.
    """
    if n_workers > 1 and episode_sink is not None:
        raise ValueError("episode_sink requires n_workers == 1")
    seeds = config.seeds
    if n_workers <= 1 or len(seeds) == 1:
        parts = [_run_single_seed(config, seed, episode_sink) for seed in seeds]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(min(n_workers, len(seeds))) as pool:
            parts = pool.starmap(_run_single_seed, [(config, seed) for seed in seeds])
    rows: list[MetricsRow] = []
    for part in parts:
        rows.extend(part)
    return rows


def write_metrics(rows: Sequence[MetricsRow], path) -> None:
    """CSV with a fixed header, sorted by (seed, block, phase), floats with
    six decimal places. Read back with :func:`read_metrics`."""
    ordered = sorted(rows, key=lambda r: (r.seed, r.block, r.phase))
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_HEADER)
            for row in ordered:
                writer.writerow(
                    [
                        row.seed,
                        row.block,
                        row.phase,
                        row.episodes,
                        f"{row.mean_extrinsic_reward:.6f}",
                        f"{row.mean_invocations:.6f}",
                        f"{row.mean_intrinsic_success:.6f}",
                        f"{row.seconds:.6f}",
                    ]
                )
    except OSError as exc:
        raise OSError(f"failed writing metrics to {path}: {exc}") from exc


def read_metrics(path) -> list[MetricsRow]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader, ()))
            if header != METRICS_HEADER:
                raise ValueError(f"{path}: unexpected metrics header {header}")
            rows = []
            for record in reader:
                if not record:
                    continue
                rows.append(
                    MetricsRow(
                        seed=int(record[0]),
                        block=int(record[1]),
                        phase=record[2],
                        episodes=int(record[3]),
                        mean_extrinsic_reward=float(record[4]),
                        mean_invocations=float(record[5]),
                        mean_intrinsic_success=float(record[6]),
                        seconds=float(record[7]),
                    )
                )
            return rows
    except OSError as exc:
        raise OSError(f"failed reading metrics from {path}: {exc}") from exc
