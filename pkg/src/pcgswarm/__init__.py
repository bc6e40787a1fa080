"""Multi-agent grid level design toolkit.

Cooperating turtle agents edit tile maps under a shared telescoping reward;
this package provides the environment, scripted baselines, a desk-scale PPO
trainer, and a seeded evaluation harness.
"""

from .grid import CHARSET, Domain, Grid, MapShape, Tile, TileSet, init_random_grid, sample_map_shape
from .pathing import (
    AIR_ONLY,
    NOT_WALL,
    UNREACHABLE,
    DistanceField,
    approx_diameter,
    connected_regions,
    distance_field,
    typed_path_length,
)
from .rewards import (
    MetricsVector,
    RewardWeights,
    TargetSpec,
    compute_metrics,
    default_targets,
    default_weights,
    interval_distance,
    loss,
    metric_names,
    reward,
)
from .env import (
    EnvConfig,
    EnvState,
    Observation,
    episode_budget,
    load_trace,
    n_actions,
    observe,
    observe_all,
    replay_trace,
    reset,
    rollout,
    save_trace,
    step,
)
from .agents import GreedyPolicy, NoopPolicy, PolicyTag, RandomPolicy, greedy_action, make_scripted_policy
from .ppo import (
    Checkpoint,
    CurveRecord,
    PolicyParams,
    PPOConfig,
    TrainedPolicy,
    featurize,
    gae,
    load_checkpoint,
    obs_dim,
    policy_forward,
    ppo_update,
    save_checkpoint,
    train,
)
from .evaluate import (
    Arm,
    EvalSpec,
    EvalTable,
    TrendRegime,
    evaluate,
    regime_arms,
    run_episode,
    trend_experiment,
)
from .rng import RngStream
from .config import ConfigError, RunConfig, load_run_config

__version__ = "0.1.0"
