import numpy as np
import pytest

from mgx.game import MarkovGame


def matrix_game(R, terminal_states=1):
    """Horizon-1, single-state game whose reward matrix is R."""
    R = np.asarray(R, dtype=float)
    P = np.zeros((1,) + R.shape + (terminal_states,))
    P[..., 0] = 1.0
    return MarkovGame([P], [R[None]], terminal_states=terminal_states)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
