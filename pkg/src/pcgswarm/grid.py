"""Tile vocabulary, map shapes, and the grid value type.

Tile codes are frozen: they appear in traces, checkpoints, and rendered
output, so changing them breaks replay compatibility.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterator

import numpy as np

from .rng import RngStream


class Tile(IntEnum):
    AIR = 0
    WALL = 1
    PLAYER = 2
    KEY = 3
    DOOR = 4
    ENEMY = 5
    BORDER = 255  # padding outside the map, never stored in cells


CHARSET: dict[int, str] = {
    Tile.AIR: ".",
    Tile.WALL: "#",
    Tile.PLAYER: "P",
    Tile.KEY: "K",
    Tile.DOOR: "D",
    Tile.ENEMY: "E",
    Tile.BORDER: "+",
}

_CHAR_TO_CODE = {ch: code for code, ch in CHARSET.items()}


class Domain(Enum):
    """Level-design task family. Decides the editable tile set and metrics."""

    BINARY = "binary"
    DUNGEON = "dungeon"


_EDITABLE: dict[Domain, tuple[Tile, ...]] = {
    Domain.BINARY: (Tile.AIR, Tile.WALL),
    Domain.DUNGEON: (Tile.AIR, Tile.WALL, Tile.PLAYER, Tile.KEY, Tile.DOOR, Tile.ENEMY),
}


@dataclass(frozen=True)
class TileSet:
    """The tiles a domain's editors may write."""

    domain: Domain
    tiles: tuple[Tile, ...]

    @classmethod
    def for_domain(cls, domain: Domain) -> "TileSet":
        return cls(domain=domain, tiles=_EDITABLE[domain])

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(int(t) for t in self.tiles)

    def __len__(self) -> int:
        return len(self.tiles)


@dataclass(frozen=True)
class MapShape:
    """Height and width of one map, plus the cap they were sampled under."""

    height: int
    width: int
    max_width: int

    def __post_init__(self) -> None:
        if self.max_width < 1:
            raise ValueError(f"max_width must be positive, got {self.max_width}")
        for name, value in (("height", self.height), ("width", self.width)):
            if value < 1:
                raise ValueError(f"{name} must be positive, got {value}")
            if value > self.max_width:
                raise ValueError(
                    f"{name}={value} exceeds max_width={self.max_width}"
                )

    @property
    def n_tiles(self) -> int:
        return self.height * self.width


MIN_SIDE = 3


def sample_map_shape(max_width: int, randomize: bool, rng: RngStream) -> MapShape:
    """Draw a map shape under the given cap.

    Fixed mode returns the square (max_width, max_width). Random mode draws
    height then width, each uniform over [MIN_SIDE, max_width]. Maps narrower
    than MIN_SIDE have no interior and are rejected outright.
    """
    if max_width < MIN_SIDE:
        raise ValueError(f"max_width must be >= {MIN_SIDE}, got {max_width}")
    if not randomize:
        return MapShape(max_width, max_width, max_width)
    span = max_width - MIN_SIDE + 1
    height = MIN_SIDE + rng.below(span)
    width = MIN_SIDE + rng.below(span)
    return MapShape(height, width, max_width)


@dataclass(frozen=True)
class Grid:
    """One map: a domain tag plus an (H, W) uint8 array of tile codes.

    Value semantics: the public mutator returns a new Grid. Code that owns
    its array (env stepping) may mutate in place before wrapping.
    """

    domain: Domain
    shape: MapShape
    cells: np.ndarray

    def __post_init__(self) -> None:
        if self.cells.shape != (self.shape.height, self.shape.width):
            raise ValueError(
                f"cells shape {self.cells.shape} does not match map shape "
                f"({self.shape.height}, {self.shape.width})"
            )
        if self.cells.dtype != np.uint8:
            raise ValueError(f"cells must be uint8, got {self.cells.dtype}")

    def get_tile(self, row: int, col: int) -> int:
        self._check_bounds(row, col)
        return int(self.cells[row, col])

    def set_tile(self, row: int, col: int, code: int) -> "Grid":
        """Return a copy with one cell replaced."""
        self._check_bounds(row, col)
        tileset = TileSet.for_domain(self.domain)
        if code not in tileset.codes:
            raise ValueError(
                f"tile code {code} is not editable in domain {self.domain.value}; "
                f"allowed: {tileset.codes}"
            )
        cells = self.cells.copy()
        cells[row, col] = code
        return Grid(self.domain, self.shape, cells)

    def _check_bounds(self, row: int, col: int) -> None:
        if not (0 <= row < self.shape.height and 0 <= col < self.shape.width):
            raise IndexError(
                f"cell ({row}, {col}) outside map "
                f"{self.shape.height}x{self.shape.width}"
            )

    def counts(self) -> dict[int, int]:
        """Histogram of tile codes present in the map."""
        codes, freq = np.unique(self.cells, return_counts=True)
        return {int(c): int(f) for c, f in zip(codes, freq)}

    def iter_cells(self) -> Iterator[tuple[int, int, int]]:
        h, w = self.shape.height, self.shape.width
        flat = self.cells.reshape(-1)
        for i in range(h * w):
            yield i // w, i % w, int(flat[i])

    def digest(self) -> str:
        """Content hash covering domain, shape, and every cell."""
        h = hashlib.sha256()
        h.update(self.domain.value.encode())
        h.update(f":{self.shape.height}x{self.shape.width}:".encode())
        h.update(self.cells.tobytes())
        return h.hexdigest()

    # -- rendering and serialization ----------------------------------------

    def to_ascii(self) -> str:
        rows = []
        for r in range(self.shape.height):
            rows.append("".join(CHARSET[int(c)] for c in self.cells[r]))
        return "\n".join(rows)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.value,
            "height": self.shape.height,
            "width": self.shape.width,
            "max_width": self.shape.max_width,
            "cells": [[int(c) for c in row] for row in self.cells],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Grid":
        shape = MapShape(
            height=int(data["height"]),
            width=int(data["width"]),
            max_width=int(data["max_width"]),
        )
        cells = np.array(data["cells"], dtype=np.uint8)
        return cls(Domain(data["domain"]), shape, cells)

    @classmethod
    def from_ascii(cls, art: str, domain: Domain, max_width: int | None = None) -> "Grid":
        """Build a grid from charset art. Lines must be equal length."""
        lines = [ln for ln in art.strip("\n").splitlines()]
        if not lines:
            raise ValueError("empty grid art")
        width = len(lines[0])
        if any(len(ln) != width for ln in lines):
            raise ValueError("ragged grid art: all rows must have equal length")
        cells = np.zeros((len(lines), width), dtype=np.uint8)
        for r, ln in enumerate(lines):
            for c, ch in enumerate(ln):
                try:
                    cells[r, c] = _CHAR_TO_CODE[ch]
                except KeyError:
                    raise ValueError(f"unknown tile character {ch!r}") from None
        cap = max_width if max_width is not None else max(len(lines), width)
        shape = MapShape(len(lines), width, cap)
        return cls(domain, shape, cells)


def init_random_grid(
    shape: MapShape,
    tileset: TileSet,
    rng: RngStream,
    wall_prob: float = 0.5,
    min_side: int = MIN_SIDE,
) -> Grid:
    """Fill a fresh map with an i.i.d. Wall/Air mixture.

    Both domains start from the same two-tile mixture; special dungeon tiles
    only appear through edits. Cells are drawn row-major, one u64 each, with
    Wall when u < wall_prob * 2^64, so the layout is reproducible exactly.
    min_side exists for tiny fixture grids; real maps keep the default.
    """
    if not 0.0 <= wall_prob <= 1.0:
        raise ValueError(f"wall_prob must be in [0, 1], got {wall_prob}")
    if shape.height < min_side or shape.width < min_side:
        raise ValueError(
            f"map {shape.height}x{shape.width} is below the minimum side {min_side}"
        )
    threshold = int(wall_prob * float(1 << 64))
    cells = np.zeros((shape.height, shape.width), dtype=np.uint8)
    for r in range(shape.height):
        for c in range(shape.width):
            if rng.next_u64() < threshold:
                cells[r, c] = Tile.WALL
    return Grid(tileset.domain, shape, cells)
