"""Meta-controller guided multi-agent Q-learning on distributed slot
scheduling, with flat multi-agent and one-at-a-time hierarchical baselines.
"""

from .sched_env import (
    Database,
    EnvConfig,
    EpisodeSpec,
    count_solutions,
    extrinsic_reward,
    is_feasible,
    new_episode,
)
from .dqn import EpsilonSchedule, Hyperparams, ReplayBuffer, Transition
from .fcrl import FcrlAgent, enumerate_windows, run_fcrl_episode
from .baselines import HrlAgent, MarlAgent, run_hrl_episode, run_marl_episode
from .harness import ExperimentConfig, MetricsRow, load_config, run_experiment, write_metrics

__version__ = "0.1.0"
