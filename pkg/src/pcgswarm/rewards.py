"""Heuristic metrics, target intervals, and the shared telescoping reward.

The reward for a transition is loss(before) - loss(after), where loss is a
weighted sum of distances from each metric to its target interval. Because
rewards telescope, an episode's total depends only on the first and last
state, never on how often rewards are emitted along the way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .grid import Domain, Grid, MapShape, Tile
from .pathing import (
    AIR_ONLY,
    UNREACHABLE,
    _bfs_flat,
    _flat_passable,
    NOT_WALL,
    approx_diameter,
    connected_regions,
)

BINARY_METRICS: tuple[str, ...] = ("diameter", "n_regions")
DUNGEON_METRICS: tuple[str, ...] = (
    "n_players",
    "n_keys",
    "n_doors",
    "n_enemies",
    "path_pk",
    "path_kd",
    "path_pe",
)


def metric_names(domain: Domain) -> tuple[str, ...]:
    return BINARY_METRICS if domain is Domain.BINARY else DUNGEON_METRICS


@dataclass(frozen=True)
class MetricsVector:
    """Named heuristic values for one grid. None marks an unset path metric."""

    domain: Domain
    values: Mapping[str, float | None]

    def __post_init__(self) -> None:
        expected = metric_names(self.domain)
        if tuple(self.values.keys()) != expected:
            raise ValueError(
                f"metrics for {self.domain.value} must be exactly {expected}, "
                f"got {tuple(self.values.keys())}"
            )

    def get(self, name: str) -> float | None:
        return self.values[name]


@dataclass(frozen=True)
class TargetSpec:
    """Per-metric target intervals [lo, hi]; hi may be math.inf."""

    intervals: Mapping[str, tuple[float, float]]

    def __post_init__(self) -> None:
        for name, (lo, hi) in self.intervals.items():
            if math.isnan(lo) or math.isnan(hi) or lo > hi:
                raise ValueError(f"target {name}: invalid interval [{lo}, {hi}]")

    def metric_set(self) -> frozenset[str]:
        return frozenset(self.intervals)


@dataclass(frozen=True)
class RewardWeights:
    """Non-negative per-metric weights; at least one must be positive."""

    weights: Mapping[str, float]

    def __post_init__(self) -> None:
        for name, w in self.weights.items():
            if not (w >= 0.0):
                raise ValueError(f"weight {name} must be non-negative, got {w}")
        if not any(w > 0.0 for w in self.weights.values()):
            raise ValueError("at least one weight must be strictly positive")

    def metric_set(self) -> frozenset[str]:
        return frozenset(self.weights)


def interval_distance(x: float, lo: float, hi: float) -> float:
    """Distance from a value to the interval [lo, hi]; 0 when inside."""
    return max(lo - x, 0.0) + max(x - hi, 0.0)


def compute_metrics(grid: Grid) -> MetricsVector:
    """Measure a grid. Dungeon path metrics stay None until the map holds
    exactly one player, one key, one door, and at least one enemy."""
    if grid.domain is Domain.BINARY:
        return MetricsVector(
            Domain.BINARY,
            {
                "diameter": approx_diameter(grid),
                "n_regions": connected_regions(grid, AIR_ONLY),
            },
        )

    cells = grid.cells.reshape(-1)
    counts = np.bincount(cells, minlength=6)
    n_players = int(counts[Tile.PLAYER])
    n_keys = int(counts[Tile.KEY])
    n_doors = int(counts[Tile.DOOR])
    n_enemies = int(counts[Tile.ENEMY])

    path_pk: int | None = None
    path_kd: int | None = None
    path_pe: int | None = None
    if n_players == 1 and n_keys == 1 and n_doors == 1 and n_enemies >= 1:
        h, w = grid.shape.height, grid.shape.width
        flat = _flat_passable(grid, NOT_WALL)
        player = int(np.flatnonzero(cells == Tile.PLAYER)[0])
        key = int(np.flatnonzero(cells == Tile.KEY)[0])
        door = int(np.flatnonzero(cells == Tile.DOOR)[0])

        from_player = _bfs_flat(flat, h, w, player)
        d = from_player[key]
        path_pk = d if d != UNREACHABLE else None
        best: int | None = None
        for e in np.flatnonzero(cells == Tile.ENEMY):
            d = from_player[int(e)]
            if d != UNREACHABLE and (best is None or d < best):
                best = d
        path_pe = best

        from_key = _bfs_flat(flat, h, w, key)
        d = from_key[door]
        path_kd = d if d != UNREACHABLE else None

    return MetricsVector(
        Domain.DUNGEON,
        {
            "n_players": n_players,
            "n_keys": n_keys,
            "n_doors": n_doors,
            "n_enemies": n_enemies,
            "path_pk": path_pk,
            "path_kd": path_kd,
            "path_pe": path_pe,
        },
    )


def loss(m: MetricsVector, targets: TargetSpec, weights: RewardWeights) -> float:
    """Weighted distance of all metrics from their targets. Unset metrics
    are scored as value 0, i.e. maximally far below a high target."""
    names = frozenset(m.values)
    if names != targets.metric_set() or names != weights.metric_set():
        raise ValueError(
            f"metric sets differ: metrics={sorted(names)}, "
            f"targets={sorted(targets.metric_set())}, "
            f"weights={sorted(weights.metric_set())}"
        )
    total = 0.0
    for name, value in m.values.items():
        lo, hi = targets.intervals[name]
        x = 0.0 if value is None else float(value)
        total += weights.weights[name] * interval_distance(x, lo, hi)
    return total


def reward(
    prev: MetricsVector,
    curr: MetricsVector,
    targets: TargetSpec,
    weights: RewardWeights,
) -> float:
    """Improvement in loss across one transition; positive means progress."""
    return loss(prev, targets, weights) - loss(curr, targets, weights)


def default_targets(domain: Domain, shape: MapShape) -> TargetSpec:
    """Stock targets: maximal maze diameter proxied by the H*W upper bound,
    a single Air region, one of each dungeon fixture, a handful of enemies,
    and long unlock paths."""
    area = float(shape.n_tiles)
    if domain is Domain.BINARY:
        return TargetSpec(
            {
                "diameter": (area, math.inf),
                "n_regions": (1.0, 1.0),
            }
        )
    return TargetSpec(
        {
            "n_players": (1.0, 1.0),
            "n_keys": (1.0, 1.0),
            "n_doors": (1.0, 1.0),
            "n_enemies": (2.0, 5.0),
            "path_pk": (area, math.inf),
            "path_kd": (area, math.inf),
            "path_pe": (3.0, math.inf),
        }
    )


def default_weights(domain: Domain) -> RewardWeights:
    return RewardWeights({name: 1.0 for name in metric_names(domain)})


# -- config/trace serialization ---------------------------------------------


def targets_to_jsonable(targets: TargetSpec) -> dict[str, list[float | None]]:
    out: dict[str, list[float | None]] = {}
    for name, (lo, hi) in targets.intervals.items():
        out[name] = [lo, None if math.isinf(hi) else hi]
    return out


def targets_from_jsonable(data: Mapping[str, object]) -> TargetSpec:
    """Parse {metric: [lo] | [lo, hi] | [lo, null] | [lo, "inf"]}."""
    intervals: dict[str, tuple[float, float]] = {}
    for name, raw in data.items():
        if not isinstance(raw, (list, tuple)) or not 1 <= len(raw) <= 2:
            raise ValueError(
                f"target {name}: expected [lo] or [lo, hi], got {raw!r}"
            )
        lo = float(raw[0])  # type: ignore[arg-type]
        hi_raw = raw[1] if len(raw) == 2 else None
        if hi_raw is None or (isinstance(hi_raw, str) and hi_raw.lower() == "inf"):
            hi = math.inf
        elif isinstance(hi_raw, (int, float)):
            hi = float(hi_raw)
        else:
            raise ValueError(f"target {name}: bad upper bound {hi_raw!r}")
        intervals[name] = (lo, hi)
    return TargetSpec(intervals)


def weights_to_jsonable(weights: RewardWeights) -> dict[str, float]:
    return dict(weights.weights)


def weights_from_jsonable(data: Mapping[str, object]) -> RewardWeights:
    out: dict[str, float] = {}
    for name, raw in data.items():
        if not isinstance(raw, (int, float)):
            raise ValueError(f"weight {name}: expected a number, got {raw!r}")
        out[name] = float(raw)
    return RewardWeights(out)
