from __future__ import annotations

import numpy as np
import pytest

from pcgswarm.grid import Domain, Grid, MapShape, TileSet, init_random_grid
from pcgswarm.rng import RngStream


def grid_of(art: str, domain: Domain = Domain.BINARY) -> Grid:
    return Grid.from_ascii(art, domain)


def random_grid(
    seed: int, height: int = 8, width: int = 8, wall_prob: float = 0.5,
    domain: Domain = Domain.BINARY,
) -> Grid:
    shape = MapShape(height, width, max(height, width))
    return init_random_grid(
        shape, TileSet.for_domain(domain), RngStream(seed), wall_prob, min_side=1
    )


def all_3x3_binary_grids():
    """All 512 Wall/Air assignments of a 3x3 map."""
    for bits in range(512):
        cells = np.zeros((3, 3), dtype=np.uint8)
        for i in range(9):
            cells[i // 3, i % 3] = (bits >> i) & 1
        yield Grid(Domain.BINARY, MapShape(3, 3, 3), cells)


@pytest.fixture
def rng() -> RngStream:
    return RngStream(1234)
