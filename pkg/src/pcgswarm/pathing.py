"""Shortest paths, region counts, and the two-pass diameter estimate.

All movement is 4-connected with unit edge cost, so plain breadth-first
search is the exact shortest-path algorithm. Neighbor index tables are
cached per map size; the search itself runs on flat Python lists, which
beats numpy at these map sizes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from .grid import Grid, Tile

UNREACHABLE = -1

# Passability rules used by the metrics: maze connectivity walks Air only,
# typed paths may cross anything that is not a Wall.
AIR_ONLY = frozenset({int(Tile.AIR)})
NOT_WALL = frozenset(
    {int(t) for t in (Tile.AIR, Tile.PLAYER, Tile.KEY, Tile.DOOR, Tile.ENEMY)}
)

Passable = Callable[[int], bool] | Iterable[int]

_MAX_CODE = 6  # editable codes are 0..5; Border never appears in cells


def _passable_lut(passable: Passable) -> tuple[bool, ...]:
    if callable(passable):
        return tuple(bool(passable(code)) for code in range(_MAX_CODE))
    codes = frozenset(int(c) for c in passable)
    return tuple(code in codes for code in range(_MAX_CODE))


def _flat_passable(grid: Grid, passable: Passable) -> list[bool]:
    lut = np.asarray(_passable_lut(passable), dtype=bool)
    return lut[grid.cells.reshape(-1)].tolist()


@lru_cache(maxsize=None)
def _neighbor_table(height: int, width: int) -> tuple[tuple[int, ...], ...]:
    """Flat-index 4-neighborhoods for one map size."""
    table = []
    for idx in range(height * width):
        r, c = divmod(idx, width)
        nbrs = []
        if r > 0:
            nbrs.append(idx - width)
        if r + 1 < height:
            nbrs.append(idx + width)
        if c > 0:
            nbrs.append(idx - 1)
        if c + 1 < width:
            nbrs.append(idx + 1)
        table.append(tuple(nbrs))
    return tuple(table)


def _bfs_flat(flat: list[bool], height: int, width: int, src: int) -> list[int]:
    nbr = _neighbor_table(height, width)
    dist = [UNREACHABLE] * (height * width)
    dist[src] = 0
    queue = deque([src])
    pop = queue.popleft
    push = queue.append
    while queue:
        i = pop()
        d = dist[i] + 1
        for j in nbr[i]:
            if flat[j] and dist[j] < 0:
                dist[j] = d
                push(j)
    return dist


def _farthest(dist: list[int]) -> tuple[int, int]:
    """(max distance, smallest flat index attaining it). Ignores unreachable."""
    best_d = 0
    best_i = -1
    for i, d in enumerate(dist):
        if d > best_d:
            best_d = d
            best_i = i
    return best_d, best_i


@dataclass(frozen=True)
class DistanceField:
    """BFS distances from one source; UNREACHABLE marks blocked cells."""

    source: tuple[int, int]
    dist: np.ndarray  # (H, W) int32

    def distance(self, row: int, col: int) -> int:
        return int(self.dist[row, col])

    def reachable(self, row: int, col: int) -> bool:
        return int(self.dist[row, col]) != UNREACHABLE


def distance_field(
    grid: Grid, source: tuple[int, int], passable: Passable
) -> DistanceField:
    """Exact shortest-path distances from source under a passability rule.

    Args:
        grid: the map to search.
        source: (row, col) start cell; must itself be passable.
        passable: predicate over tile codes, or a collection of codes.

    Raises:
        IndexError: source outside the map.
        ValueError: source cell not passable.
    """
    h, w = grid.shape.height, grid.shape.width
    r, c = source
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"source {source} outside map {h}x{w}")
    flat = _flat_passable(grid, passable)
    src = r * w + c
    if not flat[src]:
        raise ValueError(f"source {source} is not passable")
    dist = _bfs_flat(flat, h, w, src)
    return DistanceField(source=(r, c), dist=np.asarray(dist, dtype=np.int32).reshape(h, w))


def approx_diameter(grid: Grid) -> int:
    """Two-pass estimate of the longest shortest Air-to-Air path.

    First search starts at the first Air cell in row-major order; the second
    starts at the farthest cell found (ties broken toward the smallest
    row-major index) and its greatest distance is returned. The result never
    exceeds the true diameter and matches it exactly when the Air region is
    a tree. Returns 0 when fewer than two Air cells reach each other.
    """
    flat = _flat_passable(grid, AIR_ONLY)
    try:
        start = flat.index(True)
    except ValueError:
        return 0
    h, w = grid.shape.height, grid.shape.width
    first = _bfs_flat(flat, h, w, start)
    d1, far = _farthest(first)
    if far < 0:
        return 0
    second = _bfs_flat(flat, h, w, far)
    d2, _ = _farthest(second)
    return d2


def connected_regions(grid: Grid, passable: Passable) -> int:
    """Number of 4-connected components of passable cells."""
    flat = _flat_passable(grid, passable)
    h, w = grid.shape.height, grid.shape.width
    nbr = _neighbor_table(h, w)
    seen = [False] * (h * w)
    regions = 0
    for i in range(h * w):
        if not flat[i] or seen[i]:
            continue
        regions += 1
        seen[i] = True
        stack = [i]
        while stack:
            k = stack.pop()
            for j in nbr[k]:
                if flat[j] and not seen[j]:
                    seen[j] = True
                    stack.append(j)
    return regions


def typed_path_length(grid: Grid, from_code: int, to_code: int) -> int | None:
    """Shortest walk (Walls impassable) from the unique from-tile to the
    nearest to-tile.

    Returns None when no to-tile exists or none is reachable.

    Raises:
        ValueError: the map does not contain exactly one from-tile.
    """
    cells = grid.cells.reshape(-1)
    sources = np.flatnonzero(cells == from_code)
    if len(sources) != 1:
        raise ValueError(
            f"expected exactly one tile of code {from_code}, found {len(sources)}"
        )
    targets = np.flatnonzero(cells == to_code)
    if len(targets) == 0:
        return None
    h, w = grid.shape.height, grid.shape.width
    flat = _flat_passable(grid, NOT_WALL)
    dist = _bfs_flat(flat, h, w, int(sources[0]))
    best: int | None = None
    for t in targets:
        d = dist[int(t)]
        if d != UNREACHABLE and (best is None or d < best):
            best = d
    return best
