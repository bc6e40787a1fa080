"""Multi-agent turtle editing environment.

All agents submit one action per joint step. Edits apply sequentially in
agent index order, so when two agents write the same cell the higher index
wins. Reward is shared and telescoping: the drop in target-distance loss
since the last reward computation, emitted every reward_freq steps and
always flushed on the final step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .grid import Domain, Grid, MapShape, Tile, TileSet, init_random_grid, sample_map_shape
from .rewards import (
    MetricsVector,
    RewardWeights,
    TargetSpec,
    compute_metrics,
    default_targets,
    default_weights,
    loss,
    metric_names,
    targets_from_jsonable,
    targets_to_jsonable,
    weights_from_jsonable,
    weights_to_jsonable,
)
from .rng import RngStream

# Action encoding is frozen: moves first, then Place in tile-code order.
MOVE_NORTH, MOVE_SOUTH, MOVE_EAST, MOVE_WEST = 0, 1, 2, 3
_MOVE_DELTAS: tuple[tuple[int, int], ...] = ((-1, 0), (1, 0), (0, 1), (0, -1))
N_MOVE_ACTIONS = 4

FULL_WINDOW = "full"


def n_actions(domain: Domain) -> int:
    return N_MOVE_ACTIONS + len(TileSet.for_domain(domain))


def place_code(domain: Domain, action: int) -> int | None:
    """Tile code written by a Place action, or None for moves."""
    if action < N_MOVE_ACTIONS:
        return None
    return TileSet.for_domain(domain).codes[action - N_MOVE_ACTIONS]


def action_name(domain: Domain, action: int) -> str:
    if action < N_MOVE_ACTIONS:
        return ("move_n", "move_s", "move_e", "move_w")[action]
    tile = TileSet.for_domain(domain).tiles[action - N_MOVE_ACTIONS]
    return f"place_{tile.name.lower()}"


@dataclass
class EnvConfig:
    """Everything that defines an episode distribution.

    obs_window is an odd or even span of tiles, or the string "full", which
    resolves to 2*max_width - 1 so the whole map stays visible from any
    agent position.
    """

    domain: Domain
    n_agents: int
    obs_window: int | str = 3
    max_board_scans: float = 1.0
    reward_freq: int = 1
    max_width: int = 16
    randomize_shape: bool = False
    wall_prob: float = 0.5
    targets: TargetSpec | None = None
    weights: RewardWeights | None = None
    seed: int = 0

    def validate(self) -> None:
        if not isinstance(self.domain, Domain):
            raise ValueError(f"domain must be a Domain, got {self.domain!r}")
        if not 1 <= self.n_agents <= 8:
            raise ValueError(f"n_agents must be in [1, 8], got {self.n_agents}")
        if isinstance(self.obs_window, str):
            if self.obs_window != FULL_WINDOW:
                raise ValueError(
                    f'obs_window must be an int or "full", got {self.obs_window!r}'
                )
        elif not (isinstance(self.obs_window, int) and self.obs_window >= 3):
            raise ValueError(f"obs_window must be >= 3, got {self.obs_window}")
        if not self.max_board_scans > 0:
            raise ValueError(
                f"max_board_scans must be positive, got {self.max_board_scans}"
            )
        if not (isinstance(self.reward_freq, int) and self.reward_freq >= 1):
            raise ValueError(f"reward_freq must be an int >= 1, got {self.reward_freq}")
        if self.max_width < 3:
            raise ValueError(f"max_width must be >= 3, got {self.max_width}")
        if not 0.0 <= self.wall_prob <= 1.0:
            raise ValueError(f"wall_prob must be in [0, 1], got {self.wall_prob}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < (1 << 64)):
            raise ValueError(f"seed must be a 64-bit unsigned int, got {self.seed}")
        names = frozenset(metric_names(self.domain))
        if self.targets is not None and self.targets.metric_set() != names:
            raise ValueError(
                f"targets name metrics {sorted(self.targets.metric_set())}, "
                f"domain {self.domain.value} has {sorted(names)}"
            )
        if self.weights is not None and self.weights.metric_set() != names:
            raise ValueError(
                f"weights name metrics {sorted(self.weights.metric_set())}, "
                f"domain {self.domain.value} has {sorted(names)}"
            )

    def resolved_obs_window(self) -> int:
        if self.obs_window == FULL_WINDOW:
            return 2 * self.max_width - 1
        return int(self.obs_window)

    def to_dict(self) -> dict:
        out: dict = {
            "domain": self.domain.value,
            "n_agents": self.n_agents,
            "obs_window": self.obs_window,
            "max_board_scans": self.max_board_scans,
            "reward_freq": self.reward_freq,
            "max_width": self.max_width,
            "randomize_shape": self.randomize_shape,
            "wall_prob": self.wall_prob,
            "seed": self.seed,
        }
        if self.targets is not None:
            out["targets"] = targets_to_jsonable(self.targets)
        if self.weights is not None:
            out["weights"] = weights_to_jsonable(self.weights)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "EnvConfig":
        cfg = cls(
            domain=Domain(data["domain"]),
            n_agents=int(data["n_agents"]),
            obs_window=data.get("obs_window", 3),
            max_board_scans=float(data.get("max_board_scans", 1.0)),
            reward_freq=int(data.get("reward_freq", 1)),
            max_width=int(data.get("max_width", 16)),
            randomize_shape=bool(data.get("randomize_shape", False)),
            wall_prob=float(data.get("wall_prob", 0.5)),
            targets=targets_from_jsonable(data["targets"]) if "targets" in data else None,
            weights=weights_from_jsonable(data["weights"]) if "weights" in data else None,
            seed=int(data.get("seed", 0)),
        )
        cfg.validate()
        return cfg


@dataclass
class EnvState:
    """One episode in progress. step() returns a new state; it never mutates.

    last_loss caches loss(last_metrics) so reward steps need one metrics
    computation, not two.
    """

    grid: Grid
    positions: tuple[tuple[int, int], ...]
    step_count: int
    budget: int
    last_metrics: MetricsVector
    last_loss: float
    targets: TargetSpec
    weights: RewardWeights
    rng: RngStream

    @property
    def done(self) -> bool:
        return self.step_count >= self.budget


@dataclass(frozen=True)
class Observation:
    """Egocentric window: tile channel plus one mask channel per agent,
    rotated so mask channel 0 belongs to the observing agent."""

    patch: np.ndarray  # (w, w, 1 + n_agents) uint8

    @property
    def window(self) -> int:
        return self.patch.shape[0]

    def tile_channel(self) -> np.ndarray:
        return self.patch[:, :, 0]

    def mask_channel(self, k: int) -> np.ndarray:
        return self.patch[:, :, 1 + k]


def episode_budget(config: EnvConfig, shape: MapShape) -> int:
    """Joint steps per episode: floor(max_board_scans * 2 * H * W).

    One board scan is two joint steps per tile, enough for every agent to
    visit and edit each cell once.
    """
    budget = math.floor(config.max_board_scans * 2 * shape.height * shape.width)
    if budget < 1:
        raise ValueError(
            f"episode budget is {budget}; max_board_scans={config.max_board_scans} "
            f"is too small for a {shape.height}x{shape.width} map"
        )
    return budget


def reset(config: EnvConfig, rng: RngStream | None = None) -> tuple[EnvState, list[Observation]]:
    """Start an episode. Draw order is fixed: shape, then cells row-major,
    then each agent's (row, col). Pass rng to continue an existing stream;
    otherwise a fresh stream is keyed from config.seed."""
    config.validate()
    if rng is None:
        rng = RngStream(config.seed)
    shape = sample_map_shape(config.max_width, config.randomize_shape, rng)
    tileset = TileSet.for_domain(config.domain)
    grid = init_random_grid(shape, tileset, rng, config.wall_prob)
    positions = tuple(
        (rng.below(shape.height), rng.below(shape.width)) for _ in range(config.n_agents)
    )
    targets = config.targets if config.targets is not None else default_targets(config.domain, shape)
    weights = config.weights if config.weights is not None else default_weights(config.domain)
    metrics = compute_metrics(grid)
    state = EnvState(
        grid=grid,
        positions=positions,
        step_count=0,
        budget=episode_budget(config, shape),
        last_metrics=metrics,
        last_loss=loss(metrics, targets, weights),
        targets=targets,
        weights=weights,
        rng=rng,
    )
    return state, observe_all(state, config)


def step(
    state: EnvState, actions: Sequence[int], config: EnvConfig
) -> tuple[EnvState, list[Observation], float, bool]:
    """Apply one joint action.

    Returns (new state, per-agent observations, shared reward, done).
    Reward is zero on non-reward steps; the final step always computes it.
    """
    n = len(state.positions)
    if state.done:
        raise ValueError("episode is done; reset before stepping again")
    if len(actions) != n:
        raise ValueError(f"expected {n} actions, got {len(actions)}")
    limit = n_actions(config.domain)
    codes = TileSet.for_domain(config.domain).codes

    h, w = state.grid.shape.height, state.grid.shape.width
    cells = state.grid.cells.copy()
    positions = list(state.positions)
    for i, action in enumerate(actions):
        if not (isinstance(action, (int, np.integer)) and 0 <= action < limit):
            raise ValueError(
                f"agent {i}: action {action!r} outside [0, {limit}) for "
                f"domain {config.domain.value}"
            )
        if action < N_MOVE_ACTIONS:
            dr, dc = _MOVE_DELTAS[action]
            r, c = positions[i]
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w:
                positions[i] = (nr, nc)
        else:
            r, c = positions[i]
            cells[r, c] = codes[action - N_MOVE_ACTIONS]

    grid = Grid(state.grid.domain, state.grid.shape, cells)
    step_count = state.step_count + 1
    done = step_count >= state.budget

    if step_count % config.reward_freq == 0 or done:
        metrics = compute_metrics(grid)
        new_loss = loss(metrics, state.targets, state.weights)
        shared_reward = state.last_loss - new_loss
    else:
        metrics = state.last_metrics
        new_loss = state.last_loss
        shared_reward = 0.0

    new_state = EnvState(
        grid=grid,
        positions=tuple(positions),
        step_count=step_count,
        budget=state.budget,
        last_metrics=metrics,
        last_loss=new_loss,
        targets=state.targets,
        weights=state.weights,
        rng=state.rng,
    )
    return new_state, observe_all(new_state, config), shared_reward, done


def observe(state: EnvState, agent_id: int, config: EnvConfig) -> Observation:
    """Window centered on the agent; for even windows the center sits at
    offset (w-1)//2, the top-left cell of the central 2x2, so the window
    extends one extra cell right and down. Cells beyond the map read as
    Border; agent masks appear only where agents fall inside the window."""
    n = len(state.positions)
    if not 0 <= agent_id < n:
        raise IndexError(f"agent_id {agent_id} outside [0, {n})")
    w = config.resolved_obs_window()
    off = (w - 1) // 2
    h_map, w_map = state.grid.shape.height, state.grid.shape.width
    ar, ac = state.positions[agent_id]
    r0, c0 = ar - off, ac - off

    patch = np.zeros((w, w, 1 + n), dtype=np.uint8)
    patch[:, :, 0] = Tile.BORDER
    rs, re = max(r0, 0), min(r0 + w, h_map)
    cs, ce = max(c0, 0), min(c0 + w, w_map)
    if rs < re and cs < ce:
        patch[rs - r0 : re - r0, cs - c0 : ce - c0, 0] = state.grid.cells[rs:re, cs:ce]

    for k in range(n):
        orow, ocol = state.positions[(agent_id + k) % n]
        pr, pc = orow - r0, ocol - c0
        if 0 <= pr < w and 0 <= pc < w:
            patch[pr, pc, 1 + k] = 1
    return Observation(patch=patch)


def observe_all(state: EnvState, config: EnvConfig) -> list[Observation]:
    return [observe(state, i, config) for i in range(len(state.positions))]


# -- rollouts and traces -----------------------------------------------------


class Policy(Protocol):
    def actions(
        self,
        state: EnvState,
        observations: Sequence[Observation],
        config: EnvConfig,
        rng: RngStream,
    ) -> list[int]: ...


RENDER_LAST = -1


@dataclass
class RolloutResult:
    header: dict
    steps: list[dict]
    final_state: EnvState
    total_reward: float
    frames: dict[int, str] = field(default_factory=dict)


def rollout(
    config: EnvConfig,
    policy: Policy,
    frames_at: Iterable[int] = (),
) -> RolloutResult:
    """Play one episode from config.seed and log every joint action.

    The environment stream is keyed from config.seed; the policy draws from
    an independent split so logged actions stay reproducible. frames_at
    selects ASCII snapshots by step index (0 = initial grid, RENDER_LAST =
    final grid).
    """
    state, obs = reset(config)
    policy_rng = RngStream(config.seed).split("policy")
    wanted = set(frames_at)
    if RENDER_LAST in wanted:
        wanted.discard(RENDER_LAST)
        wanted.add(state.budget)

    header = {"version": 1, "config": config.to_dict(), "seed": config.seed,
              "grid": state.grid.to_dict()}
    frames: dict[int, str] = {}
    if 0 in wanted:
        frames[0] = state.grid.to_ascii()

    steps: list[dict] = []
    total = 0.0
    done = False
    while not done:
        acts = policy.actions(state, obs, config, policy_rng)
        state, obs, r, done = step(state, acts, config)
        total += r
        steps.append(
            {"step": state.step_count, "actions": [int(a) for a in acts],
             "reward": r, "done": done}
        )
        if state.step_count in wanted:
            frames[state.step_count] = state.grid.to_ascii()
    return RolloutResult(header, steps, state, total, frames)


def save_trace(path: str | Path, result: RolloutResult) -> None:
    """Write header plus one JSON line per step."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(result.header) + "\n")
        for rec in result.steps:
            f.write(json.dumps(rec) + "\n")


def load_trace(path: str | Path) -> tuple[dict, list[dict]]:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"trace {path} is empty")
    header = json.loads(lines[0])
    if "config" not in header or "grid" not in header or "seed" not in header:
        raise ValueError("trace header must carry config, seed, and grid")
    return header, [json.loads(ln) for ln in lines[1:]]


@dataclass
class ReplayResult:
    final_state: EnvState
    n_steps: int
    total_reward: float


def replay_trace(header: dict, steps: list[dict]) -> ReplayResult:
    """Re-run a logged episode and verify it bit-exactly.

    Raises ValueError on the first divergence: initial grid, step order,
    per-step reward, or done flag.
    """
    config = EnvConfig.from_dict(dict(header["config"], seed=header["seed"]))
    state, _ = reset(config)
    logged = Grid.from_dict(header["grid"])
    if state.grid.digest() != logged.digest():
        raise ValueError(
            "replay mismatch: initial grid differs from the trace header "
            f"(got {state.grid.digest()[:12]}, logged {logged.digest()[:12]})"
        )
    total = 0.0
    for i, rec in enumerate(steps, start=1):
        if rec["step"] != i:
            raise ValueError(f"replay mismatch: step {i} logged as {rec['step']}")
        state, _, r, done = step(state, rec["actions"], config)
        total += r
        if r != rec["reward"]:
            raise ValueError(
                f"replay mismatch at step {i}: reward {r!r} vs logged {rec['reward']!r}"
            )
        if done != rec["done"]:
            raise ValueError(
                f"replay mismatch at step {i}: done {done} vs logged {rec['done']}"
            )
    if not state.done:
        raise ValueError(
            f"trace ends at step {len(steps)} but the episode budget is {state.budget}"
        )
    return ReplayResult(final_state=state, n_steps=len(steps), total_reward=total)
