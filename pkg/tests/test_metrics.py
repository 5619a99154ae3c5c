import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from llmpred.errors import DimensionMismatch, EmptySample
from llmpred.metrics import ks_statistic, mae, mse

import oracles

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_hand_sums():
    assert mse([0, 1, 2], [1, 1, 1]) == pytest.approx(2 / 3)
    assert mae([0, 1, 2], [1, 1, 1]) == pytest.approx(2 / 3)
    a = np.linspace(0, 1, 10)
    assert mse(a, a + 0.1) == pytest.approx(0.01)
    assert mae(a, a + 0.1) == pytest.approx(0.1)


def test_errors():
    with pytest.raises(DimensionMismatch):
        mse([1, 2], [1])
    with pytest.raises(DimensionMismatch):
        mae([], [])
    with pytest.raises(EmptySample):
        ks_statistic([], [1.0])


def test_ks_examples():
    assert ks_statistic([1, 2, 3], [3, 1, 2]) == 0.0
    assert ks_statistic([0, 0], [1, 1]) == 1.0
    assert ks_statistic([1, 2, 3, 4], [3, 4, 5, 6]) == 0.5


def test_ks_unequal_sizes_match_oracle(rng):
    for _ in range(50):
        a = rng.integers(0, 6, rng.integers(1, 15)).astype(float)
        b = rng.integers(0, 6, rng.integers(1, 15)).astype(float)
        assert ks_statistic(a, b) == oracles.brute_force_ks(a, b)


@given(st.lists(finite, min_size=1, max_size=30), st.lists(finite, min_size=1, max_size=30))
def test_identities(a, b):
    n = min(len(a), len(b))
    a2, b2 = np.array(a[:n]), np.array(b[:n])
    assert mse(a2, a2) == mae(a2, a2) == ks_statistic(a, a) == 0
    assert mse(a2, b2) == mse(b2, a2)
    assert 0 <= ks_statistic(a, b) <= 1


@given(st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=30))
def test_mae_triangle(rows):
    a, b, c = (np.array(col) for col in zip(*rows))
    assert mae(a, c) <= mae(a, b) + mae(b, c) + 1e-9
