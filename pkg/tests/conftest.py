import numpy as np
import pytest

from sleepfair.core import History


def make_history(probs, losses, groups=None, awake=None, explored=None):
    probs = np.asarray(probs, dtype=float)
    losses = np.asarray(losses, dtype=float)
    T, n = probs.shape
    awake = ~np.isnan(losses) if awake is None else np.asarray(awake, dtype=bool)
    return History(
        t=np.arange(1, T + 1),
        groups=np.zeros(T, dtype=np.uint64) if groups is None else np.asarray(groups, dtype=np.uint64),
        probs=probs,
        losses=np.where(awake, losses, np.nan),
        awake=awake,
        explored=np.zeros(T, dtype=bool) if explored is None else np.asarray(explored, dtype=bool),
    )


@pytest.fixture
def two_round():
    """(0.5, 0.5) both rounds; losses (0, 1) then (1, 0)."""
    return make_history([[0.5, 0.5], [0.5, 0.5]], [[0, 1], [1, 0]], groups=[0b1, 0b0])
