"""Scripted baseline policies.

The greedy agent reads the full environment state, not the windowed
observation. It is a privileged one-step lookahead baseline and trend
probe, not a fair comparator for learned windowed policies.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .env import (
    EnvConfig,
    EnvState,
    N_MOVE_ACTIONS,
    Observation,
    n_actions,
)
from .grid import TileSet
from .rewards import compute_metrics, loss
from .rng import RngStream


class PolicyTag(Enum):
    RANDOM = "random"
    GREEDY = "greedy"
    NOOP = "noop"


def random_action(config: EnvConfig, rng: RngStream) -> int:
    """Uniform draw over the domain's full action set."""
    return rng.below(n_actions(config.domain))


def greedy_action(
    state: EnvState,
    agent_id: int,
    config: EnvConfig,
    current_loss: float | None = None,
) -> int:
    """Loss-minimizing action for one agent, others held at no-ops.

    Move actions and re-placing the existing tile leave the grid unchanged,
    so only placements that flip the agent's cell need evaluating. Ties
    break toward the lowest action index, which is Move N. current_loss
    lets a caller share one fresh loss computation across agents; it must
    be the loss of state.grid as it stands, not a stale cached value.
    """
    if current_loss is None:
        current_loss = loss(compute_metrics(state.grid), state.targets, state.weights)
    codes = TileSet.for_domain(config.domain).codes
    r, c = state.positions[agent_id]
    cells = state.grid.cells
    original = int(cells[r, c])

    best_action = 0
    best_loss = current_loss
    try:
        # flip in place and restore; cheaper than copying the grid per probe
        for i, code in enumerate(codes):
            if code == original:
                continue
            cells[r, c] = code
            flipped = loss(compute_metrics(state.grid), state.targets, state.weights)
            if flipped < best_loss:
                best_loss = flipped
                best_action = N_MOVE_ACTIONS + i
    finally:
        cells[r, c] = original
    return best_action


@dataclass
class NoopPolicy:
    """Every agent holds still (Move N into the clamp or a harmless step)."""

    def actions(
        self,
        state: EnvState,
        observations: Sequence[Observation],
        config: EnvConfig,
        rng: RngStream,
    ) -> list[int]:
        return [0] * len(state.positions)


@dataclass
class RandomPolicy:
    def actions(
        self,
        state: EnvState,
        observations: Sequence[Observation],
        config: EnvConfig,
        rng: RngStream,
    ) -> list[int]:
        return [random_action(config, rng) for _ in state.positions]


@dataclass
class GreedyPolicy:
    """Privileged one-step lookahead for every agent against the pre-step
    grid. Consumes no randomness, so runs are identical across reward
    frequencies by construction."""

    def actions(
        self,
        state: EnvState,
        observations: Sequence[Observation],
        config: EnvConfig,
        rng: RngStream,
    ) -> list[int]:
        current = loss(compute_metrics(state.grid), state.targets, state.weights)
        return [
            greedy_action(state, i, config, current_loss=current)
            for i in range(len(state.positions))
        ]


def make_scripted_policy(tag: PolicyTag | str):
    tag = PolicyTag(tag) if isinstance(tag, str) else tag
    if tag is PolicyTag.RANDOM:
        return RandomPolicy()
    if tag is PolicyTag.GREEDY:
        return GreedyPolicy()
    return NoopPolicy()
