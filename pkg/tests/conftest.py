import numpy as np
import pytest

from fleetlearn import make_blockpush, make_gridworld


@pytest.fixture
def grid5():
    """Empty 5x5 gridworld."""
    return make_gridworld(5, 5)


@pytest.fixture
def grid_hazard():
    """8x8 gridworld with a scatter of hazards."""
    return make_gridworld(8, 8, hazard_cells=[(2, 2), (3, 2), (5, 4), (5, 5), (1, 6)])


@pytest.fixture
def push8():
    """8x8 block-pushing workspace with a one-cell boundary band."""
    return make_blockpush(8, boundary_margin=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
