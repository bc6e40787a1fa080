"""Desk-scale shared-parameter PPO for the editing environment.

One tanh MLP pair (actor, critic) is shared by every agent; observations
are flattened, advantages come from GAE over the shared reward, and the
clipped-surrogate gradients are derived analytically in numpy. Keeping the
gradient math explicit lets tests check it against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .env import (
    EnvConfig,
    EnvState,
    Observation,
    n_actions,
    observe_all,
    reset,
    step,
)
from .grid import Domain, TileSet
from .rng import RngStream

_ADV_EPS = 1e-8


@dataclass
class PPOConfig:
    """Optimization settings. All conventional; none are domain-derived."""

    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 4
    minibatches: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    total_steps: int = 2_000_000
    n_envs: int = 8
    rollout_steps: int = 128
    hidden: int = 128

    def validate(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if not self.clip_eps > 0.0:
            raise ValueError(f"clip_eps must be positive, got {self.clip_eps}")
        if self.lr < 0.0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        for name in ("epochs", "minibatches", "total_steps", "n_envs",
                     "rollout_steps", "hidden"):
            value = getattr(self, name)
            if not (isinstance(value, int) and value >= 1):
                raise ValueError(f"{name} must be an int >= 1, got {value}")
        if self.entropy_coef < 0.0 or self.value_coef < 0.0:
            raise ValueError("entropy_coef and value_coef must be non-negative")

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma, "lam": self.lam, "clip_eps": self.clip_eps,
            "lr": self.lr, "epochs": self.epochs, "minibatches": self.minibatches,
            "entropy_coef": self.entropy_coef, "value_coef": self.value_coef,
            "total_steps": self.total_steps, "n_envs": self.n_envs,
            "rollout_steps": self.rollout_steps, "hidden": self.hidden,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PPOConfig":
        cfg = cls(**{k: data[k] for k in cls().to_dict() if k in data})
        cfg.validate()
        return cfg


# -- observation featurization ------------------------------------------------


def _tile_basis(domain: Domain) -> np.ndarray:
    """(256, n_tiles) lookup: rows are one-hot for editable codes, zero for
    Border. Cached per domain."""
    key = domain.value
    basis = _tile_basis_cache.get(key)
    if basis is None:
        codes = TileSet.for_domain(domain).codes
        basis = np.zeros((256, len(codes)), dtype=np.float64)
        for i, code in enumerate(codes):
            basis[code, i] = 1.0
        _tile_basis_cache[key] = basis
    return basis


_tile_basis_cache: dict[str, np.ndarray] = {}


def obs_dim(config: EnvConfig) -> int:
    w = config.resolved_obs_window()
    return w * w * (len(TileSet.for_domain(config.domain)) + config.n_agents)


def featurize(obs: Observation, domain: Domain) -> np.ndarray:
    """Flatten one observation: per cell, a tile one-hot (Border = zeros)
    followed by the agent mask bits."""
    basis = _tile_basis(domain)
    tiles = basis[obs.patch[:, :, 0]]
    masks = obs.patch[:, :, 1:].astype(np.float64)
    return np.concatenate([tiles, masks], axis=2).reshape(-1)


def featurize_all(
    observations: Sequence[Observation], domain: Domain
) -> np.ndarray:
    return np.stack([featurize(o, domain) for o in observations])


# -- parameters ---------------------------------------------------------------


@dataclass
class PolicyParams:
    """Shared actor and critic weights: two tanh layers each."""

    w1: np.ndarray  # (D, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, A)
    b2: np.ndarray  # (A,)
    v1: np.ndarray  # (D, h)
    c1: np.ndarray  # (h,)
    v2: np.ndarray  # (h, 1)
    c2: np.ndarray  # (1,)

    BLOCKS = ("w1", "b1", "w2", "b2", "v1", "c1", "v2", "c2")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def action_count(self) -> int:
        return self.w2.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.BLOCKS}

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{k: v.copy() for k, v in self.blocks().items()})


def init_params(input_dim: int, action_count: int, hidden: int, rng: RngStream) -> PolicyParams:
    """Gaussian fan-in init. The actor output layer starts near zero so the
    initial policy is close to uniform."""

    def gauss(rows: int, cols: int, scale: float) -> np.ndarray:
        flat = np.asarray(rng.normals(rows * cols), dtype=np.float64)
        return (flat * scale).reshape(rows, cols)

    return PolicyParams(
        w1=gauss(input_dim, hidden, 1.0 / np.sqrt(input_dim)),
        b1=np.zeros(hidden),
        w2=gauss(hidden, action_count, 0.01 / np.sqrt(hidden)),
        b2=np.zeros(action_count),
        v1=gauss(input_dim, hidden, 1.0 / np.sqrt(input_dim)),
        c1=np.zeros(hidden),
        v2=gauss(hidden, 1, 1.0 / np.sqrt(hidden)),
        c2=np.zeros(1),
    )


def policy_forward(params: PolicyParams, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Action probabilities and value estimate.

    Accepts a single flattened observation (D,) or a batch (N, D); returns
    (probs, value) with matching leading shape.
    """
    single = obs.ndim == 1
    x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if x.shape[1] != params.input_dim:
        raise ValueError(
            f"observation dim {x.shape[1]} does not match params input dim "
            f"{params.input_dim}"
        )
    _, _, probs, log_probs = _actor_forward(params, x)
    _, values = _critic_forward(params, x)
    if single:
        return probs[0], float(values[0])
    return probs, values


def _actor_forward(params: PolicyParams, x: np.ndarray):
    h1 = np.tanh(x @ params.w1 + params.b1)
    logits = h1 @ params.w2 + params.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    return h1, logits, np.exp(log_probs), log_probs


def _critic_forward(params: PolicyParams, x: np.ndarray):
    g1 = np.tanh(x @ params.v1 + params.c1)
    values = (g1 @ params.v2).reshape(-1) + params.c2[0]
    return g1, values


def sample_action(probs: np.ndarray, rng: RngStream) -> int:
    """Draw an action index from a probability row."""
    u = rng.uniform()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += float(p)
        if u < acc:
            return i
    return len(probs) - 1


# -- GAE ----------------------------------------------------------------------


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    lam: float,
    bootstrap_value: np.ndarray | float,
) -> np.ndarray:
    """Generalized advantage estimates along axis 0.

    delta_t = r_t + gamma * v_{t+1} * (1 - done_t) - v_t
    A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}

    bootstrap_value stands in for v_T and must match the trailing shape.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError(
            f"rewards {rewards.shape}, values {values.shape}, dones "
            f"{dones.shape} must share a shape"
        )
    bootstrap = np.broadcast_to(
        np.asarray(bootstrap_value, dtype=np.float64), rewards.shape[1:]
    )
    horizon = rewards.shape[0]
    adv = np.zeros_like(rewards)
    carry = np.zeros(rewards.shape[1:], dtype=np.float64)
    for t in range(horizon - 1, -1, -1):
        next_value = bootstrap if t == horizon - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        carry = delta + gamma * lam * nonterminal * carry
        adv[t] = carry
    return adv


# -- batches and the surrogate objective ---------------------------------------


@dataclass
class Trajectory:
    """Time-major rollout storage. Rewards and dones are stored once per
    (step, env): they are shared across that env's agents by construction."""

    obs: np.ndarray      # (T, E, n, D)
    actions: np.ndarray  # (T, E, n)
    logp: np.ndarray     # (T, E, n)
    values: np.ndarray   # (T, E, n)
    rewards: np.ndarray  # (T, E)
    dones: np.ndarray    # (T, E)


@dataclass
class TrajectoryBatch:
    """Flat transition set ready for minibatching."""

    obs: np.ndarray         # (N, D)
    actions: np.ndarray     # (N,)
    logp_old: np.ndarray    # (N,)
    advantages: np.ndarray  # (N,)
    returns: np.ndarray     # (N,)

    def __len__(self) -> int:
        return len(self.actions)

    def take(self, idx: np.ndarray) -> "TrajectoryBatch":
        return TrajectoryBatch(
            self.obs[idx], self.actions[idx], self.logp_old[idx],
            self.advantages[idx], self.returns[idx],
        )


def flatten_trajectory(
    traj: Trajectory, config: PPOConfig, bootstrap_values: np.ndarray
) -> TrajectoryBatch:
    """GAE per agent over the shared reward, then concatenate all agents."""
    t_len, n_envs, n_agents = traj.actions.shape
    rewards = np.repeat(traj.rewards[:, :, None], n_agents, axis=2)
    dones = np.repeat(traj.dones[:, :, None], n_agents, axis=2)
    adv = gae(rewards, traj.values, dones, config.gamma, config.lam, bootstrap_values)
    returns = adv + traj.values
    flat = t_len * n_envs * n_agents
    return TrajectoryBatch(
        obs=traj.obs.reshape(flat, -1),
        actions=traj.actions.reshape(flat),
        logp_old=traj.logp.reshape(flat),
        advantages=adv.reshape(flat),
        returns=returns.reshape(flat),
    )


def objective_and_grads(
    params: PolicyParams, batch: TrajectoryBatch, config: PPOConfig
) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Minimized total loss, its analytic gradients, and reporting stats.

    total = -L_clip + value_coef * MSE(value, return) - entropy_coef * H

    The clipped-surrogate gradient flows only where the min() selects the
    unclipped branch: masked out for ratios past 1+eps with positive
    advantage or below 1-eps with negative advantage. Advantages are used
    exactly as given; normalization is the caller's concern.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    x = batch.obs
    n = len(batch)
    eps = config.clip_eps

    h1, _, probs, log_probs = _actor_forward(params, x)
    g1, values = _critic_forward(params, x)

    rows = np.arange(n)
    logp = log_probs[rows, batch.actions]
    ratio = np.exp(logp - batch.logp_old)
    unclipped = ratio * batch.advantages
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * batch.advantages
    surrogate = np.minimum(unclipped, clipped)
    l_clip = float(surrogate.mean())

    entropy_rows = -(probs * log_probs).sum(axis=1)
    entropy = float(entropy_rows.mean())

    value_err = values - batch.returns
    value_loss = float((value_err**2).mean())

    total = -l_clip + config.value_coef * value_loss - config.entropy_coef * entropy

    # d(total)/dlogp: surrogate gradient is active where min() follows the
    # unclipped branch (ties included, matching the subgradient convention).
    active = (unclipped <= clipped).astype(np.float64)
    dlogp = -(active * ratio * batch.advantages) / n

    one_hot = np.zeros_like(probs)
    one_hot[rows, batch.actions] = 1.0
    dlogits = dlogp[:, None] * (one_hot - probs)
    # entropy term: dH/dlogits = -p * (log p + H); total carries -entropy_coef * H
    dlogits += (config.entropy_coef / n) * probs * (log_probs + entropy_rows[:, None])

    dh1 = dlogits @ params.w2.T
    dpre1 = dh1 * (1.0 - h1**2)

    dvalues = (2.0 * config.value_coef / n) * value_err
    dg1 = dvalues[:, None] @ params.v2.T
    dpre1_c = dg1 * (1.0 - g1**2)

    grads = {
        "w1": x.T @ dpre1,
        "b1": dpre1.sum(axis=0),
        "w2": h1.T @ dlogits,
        "b2": dlogits.sum(axis=0),
        "v1": x.T @ dpre1_c,
        "c1": dpre1_c.sum(axis=0),
        "v2": g1.T @ dvalues[:, None],
        "c2": np.array([dvalues.sum()]),
    }

    clip_frac = float((np.abs(ratio - 1.0) > eps).mean())
    grad_norm = float(np.sqrt(sum(float((g**2).sum()) for g in grads.values())))
    stats = {
        "surrogate": l_clip,
        "policy_loss": -l_clip,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_frac": clip_frac,
        "grad_norm": grad_norm,
    }
    return total, grads, stats


# -- optimizer and update -------------------------------------------------------


def adam_init(params: PolicyParams) -> dict:
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.blocks().items()},
        "v": {k: np.zeros_like(v) for k, v in params.blocks().items()},
    }


def _adam_step(
    params: PolicyParams, grads: dict[str, np.ndarray], opt: dict, lr: float
) -> PolicyParams:
    opt["t"] += 1
    t = opt["t"]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    new = {}
    for name, value in params.blocks().items():
        g = grads[name]
        opt["m"][name] = beta1 * opt["m"][name] + (1 - beta1) * g
        opt["v"][name] = beta2 * opt["v"][name] + (1 - beta2) * g**2
        m_hat = opt["m"][name] / (1 - beta1**t)
        v_hat = opt["v"][name] / (1 - beta2**t)
        new[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return PolicyParams(**new)


def ppo_update(
    params: PolicyParams,
    batch: TrajectoryBatch,
    config: PPOConfig,
    rng: RngStream,
    opt_state: dict | None = None,
) -> tuple[PolicyParams, dict[str, float]]:
    """Run the full epoch/minibatch schedule over one batch.

    Advantages are normalized here (batch mean 0, std 1, eps-guarded);
    returns targets are used as stored. Pass opt_state to carry Adam
    moments across updates; it is mutated in place.

    Raises FloatingPointError when any gradient block goes non-finite.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    config.validate()
    if opt_state is None:
        opt_state = adam_init(params)

    adv = batch.advantages
    norm = TrajectoryBatch(
        obs=batch.obs,
        actions=batch.actions,
        logp_old=batch.logp_old,
        advantages=(adv - adv.mean()) / (adv.std() + _ADV_EPS),
        returns=batch.returns,
    )

    n = len(norm)
    totals: dict[str, float] = {}
    count = 0
    for _ in range(config.epochs):
        order = list(range(n))
        rng.shuffle(order)
        idx = np.asarray(order)
        for chunk in np.array_split(idx, min(config.minibatches, n)):
            if len(chunk) == 0:
                continue
            _, grads, stats = objective_and_grads(params, norm.take(chunk), config)
            for name, g in grads.items():
                if not np.isfinite(g).all():
                    raise FloatingPointError(
                        f"non-finite gradient in block {name} "
                        f"(batch size {len(chunk)}, lr {config.lr})"
                    )
            params = _adam_step(params, grads, opt_state, config.lr)
            for key, value in stats.items():
                totals[key] = totals.get(key, 0.0) + value
            count += 1
    return params, {key: value / count for key, value in totals.items()}


# -- trained policy wrapper -----------------------------------------------------


@dataclass
class TrainedPolicy:
    """Joint-action adapter around shared params: every agent samples from
    the same snapshot, each from its own observation."""

    params: PolicyParams
    domain: Domain

    def actions(
        self,
        state: EnvState,
        observations: Sequence[Observation],
        config: EnvConfig,
        rng: RngStream,
    ) -> list[int]:
        x = featurize_all(observations, self.domain)
        if x.shape[1] != self.params.input_dim:
            raise ValueError(
                f"observation dim {x.shape[1]} does not match checkpoint input "
                f"dim {self.params.input_dim}; window/agent-count mismatch"
            )
        probs, _ = policy_forward(self.params, x)
        return [sample_action(row, rng) for row in probs]


# -- training loop ---------------------------------------------------------------


@dataclass
class CurveRecord:
    step: int
    mean_ep_reward: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_frac: float


CURVE_COLUMNS = ("step", "mean_ep_reward", "policy_loss", "value_loss",
                 "entropy", "clip_frac")


def write_curve_csv(path: str | Path, curve: Sequence[CurveRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(CURVE_COLUMNS) + "\n")
        for rec in curve:
            f.write(
                f"{rec.step},{rec.mean_ep_reward!r},{rec.policy_loss!r},"
                f"{rec.value_loss!r},{rec.entropy!r},{rec.clip_frac!r}\n"
            )


@dataclass
class TrainResult:
    params: PolicyParams
    curve: list[CurveRecord]
    env_steps: int
    episodes: int
    rng_state: dict


def train(
    env_config: EnvConfig,
    ppo_config: PPOConfig,
    seed: int | None = None,
    log_interval: int = 10_000,
) -> TrainResult:
    """Rollout/update loop over a batch of parallel environments.

    Environment steps are counted across all parallel envs (one joint step
    in one env = one step). The curve gets one record per log_interval
    steps: mean total reward of episodes finished in that span (carrying
    the previous mean through spans with no finished episode) plus the
    latest update's loss terms. Fully reproducible from the seed.
    """
    env_config.validate()
    ppo_config.validate()
    if seed is None:
        seed = env_config.seed
    root = RngStream(seed)
    action_rng = root.split("actions")
    shuffle_rng = root.split("shuffle")

    domain = env_config.domain
    n_agents = env_config.n_agents
    n_envs = ppo_config.n_envs
    t_len = ppo_config.rollout_steps
    input_dim = obs_dim(env_config)
    action_count = n_actions(domain)

    params = init_params(input_dim, action_count, ppo_config.hidden, root.split("init"))
    opt_state = adam_init(params)

    states: list[EnvState] = []
    feats = np.zeros((n_envs, n_agents, input_dim), dtype=np.float64)
    for e in range(n_envs):
        state, obs = reset(env_config, rng=root.split(f"env/{e}"))
        states.append(state)
        feats[e] = featurize_all(obs, domain)

    traj = Trajectory(
        obs=np.zeros((t_len, n_envs, n_agents, input_dim)),
        actions=np.zeros((t_len, n_envs, n_agents), dtype=np.int64),
        logp=np.zeros((t_len, n_envs, n_agents)),
        values=np.zeros((t_len, n_envs, n_agents)),
        rewards=np.zeros((t_len, n_envs)),
        dones=np.zeros((t_len, n_envs)),
    )

    curve: list[CurveRecord] = []
    ep_return = [0.0] * n_envs
    finished: list[float] = []
    episodes_total = 0
    last_mean = 0.0
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0}
    next_mark = log_interval
    steps_done = 0

    while steps_done < ppo_config.total_steps:
        for t in range(t_len):
            x = feats.reshape(n_envs * n_agents, input_dim)
            h1, _, probs, log_probs = _actor_forward(params, x)
            _, values = _critic_forward(params, x)
            traj.obs[t] = feats
            traj.values[t] = values.reshape(n_envs, n_agents)
            for e in range(n_envs):
                acts = []
                for a in range(n_agents):
                    row = e * n_agents + a
                    action = sample_action(probs[row], action_rng)
                    acts.append(action)
                    traj.actions[t, e, a] = action
                    traj.logp[t, e, a] = log_probs[row, action]
                state, obs, r, done = step(states[e], acts, env_config)
                traj.rewards[t, e] = r
                traj.dones[t, e] = float(done)
                ep_return[e] += r
                if done:
                    finished.append(ep_return[e])
                    episodes_total += 1
                    ep_return[e] = 0.0
                    state, obs = reset(env_config, rng=state.rng)
                states[e] = state
                feats[e] = featurize_all(obs, domain)

        x = feats.reshape(n_envs * n_agents, input_dim)
        _, bootstrap = _critic_forward(params, x)
        batch = flatten_trajectory(traj, ppo_config, bootstrap.reshape(n_envs, n_agents))
        params, up_stats = ppo_update(params, batch, ppo_config, shuffle_rng, opt_state)
        stats = up_stats
        steps_done += t_len * n_envs

        while next_mark <= steps_done and next_mark <= ppo_config.total_steps:
            if finished:
                last_mean = sum(finished) / len(finished)
                finished.clear()
            curve.append(
                CurveRecord(
                    step=next_mark,
                    mean_ep_reward=last_mean,
                    policy_loss=stats["policy_loss"],
                    value_loss=stats["value_loss"],
                    entropy=stats["entropy"],
                    clip_frac=stats["clip_frac"],
                )
            )
            next_mark += log_interval

    rng_state = {
        "seed": seed,
        "actions": list(action_rng.state()),
        "shuffle": list(shuffle_rng.state()),
    }
    return TrainResult(
        params=params,
        curve=curve,
        env_steps=steps_done,
        episodes=episodes_total,
        rng_state=rng_state,
    )


# -- checkpoints -----------------------------------------------------------------


CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    params: PolicyParams
    env_config: EnvConfig
    ppo_config: PPOConfig
    rng_state: dict
    obs_window: int  # resolved span the params were trained with

    def policy(self) -> TrainedPolicy:
        return TrainedPolicy(params=self.params, domain=self.env_config.domain)


def save_checkpoint(
    path: str | Path,
    params: PolicyParams,
    env_config: EnvConfig,
    ppo_config: PPOConfig,
    rng_state: dict,
) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "env_config": env_config.to_dict(),
        "ppo_config": ppo_config.to_dict(),
        "rng_state": rng_state,
        "obs_window": env_config.resolved_obs_window(),
    }
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        **params.blocks(),
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint {path}: unsupported version {meta.get('version')}"
            )
        blocks = {name: data[name] for name in PolicyParams.BLOCKS}
    env_config = EnvConfig.from_dict(meta["env_config"])
    # trained window is pinned: "full" must not re-resolve at a new width
    env_config.obs_window = meta["obs_window"]
    return Checkpoint(
        params=PolicyParams(**blocks),
        env_config=env_config,
        ppo_config=PPOConfig.from_dict(meta["ppo_config"]),
        rng_state=meta["rng_state"],
        obs_window=meta["obs_window"],
    )
