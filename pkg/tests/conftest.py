import numpy as np
import pytest

from acch.grid import BoundaryCondition, Grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_grid(counts, bc=BoundaryCondition.NEUMANN, lengths=None):
    if lengths is None:
        lengths = tuple(1.0 for _ in counts)
    return Grid(tuple(counts), tuple(lengths), bc)


def random_admissible(grid, rng, spread=0.18):
    """Random state comfortably inside the admissible set.

    u is centered at 0.5 and v at 0 with independent uniform noise small
    enough that u, u +- v and 1/2 +- v all stay well away from their bounds.
    """
    u = 0.5 + rng.uniform(-spread, spread, size=grid.array_shape)
    v = rng.uniform(-spread, spread, size=grid.array_shape)
    return u, v


BOTH_BC = [BoundaryCondition.NEUMANN, BoundaryCondition.PERIODIC]
