import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthmotion.errors import EmptyMask
from depthmotion.masking import MaskConfig, composite_mask, error_mask, gradient_mask

RANKS = np.arange(1, 101, dtype=float).reshape(10, 10)
ALL = np.ones((10, 10), dtype=bool)


def test_error_mask_rank_arithmetic():
    rng = np.random.default_rng(0)
    shuffled = rng.permutation(RANKS.ravel()).reshape(10, 10)
    for p, kept in ((90, 90), (50, 50)):
        m = error_mask(shuffled, ALL, MaskConfig(error_percentile=p)).numpy()
        assert m.sum() == kept
        assert shuffled[m].max() == kept


def test_error_mask_keeps_ties_and_ignores_invalid():
    assert error_mask(np.full((10, 10), 0.3), ALL).numpy().all()
    valid = ALL.copy()
    valid[:, :5] = False
    m = error_mask(RANKS, valid).numpy()
    assert not m[:, :5].any()
    assert m.sum() == math.ceil(0.9 * 50)
    with pytest.raises(EmptyMask):
        error_mask(RANKS, np.zeros((10, 10), dtype=bool))


def test_gradient_mask_examples():
    assert not gradient_mask(np.full((10, 10), 0.4), ALL).numpy().any()
    ramp = np.tile(np.linspace(0, 1, 10), (10, 1))
    assert not gradient_mask(ramp, ALL).numpy().any()
    step = np.zeros((10, 10))
    step[:, 5:] = 1.0
    m = gradient_mask(step, ALL).numpy()
    assert m.sum() == 10 and m[:, 4].all()
    with pytest.raises(EmptyMask):
        gradient_mask(step, np.zeros((10, 10), dtype=bool))


def test_composite_mask_examples():
    assert composite_mask(ALL, ALL).numpy().all()
    a = np.zeros((10, 10), dtype=bool)
    a[:5] = True
    assert not composite_mask(a, ~a).numpy().any()
    with pytest.raises(ValueError):
        composite_mask(ALL, np.ones((5, 5)))


def test_composite_fraction_of_independent_masks():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        e = rng.uniform(size=(128, 416)) < 0.9
        g = rng.uniform(size=(128, 416)) < 0.1
        frac = composite_mask(e, g).numpy().mean()
        assert 0.05 <= frac <= 0.14


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1, 99))
def test_error_mask_count_idempotence_and_monotonicity(seed, p):
    rng = np.random.default_rng(seed)
    err = rng.permutation(40 * 30).reshape(40, 30).astype(float) + rng.uniform(0, 0.5, (40, 30))
    valid = rng.uniform(size=(40, 30)) < 0.7
    n = valid.sum()
    m = error_mask(err, valid, MaskConfig(error_percentile=p)).numpy()
    assert abs(m.sum() - math.ceil(p / 100 * n)) <= 2
    # re-applying with the same threshold to the masked error map keeps the same set
    again = err <= err[m].max()
    assert np.array_equal(again & m, m)
    bigger = error_mask(err, valid, MaskConfig(error_percentile=min(p + 5, 99.9))).numpy()
    assert not (m & ~bigger).any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_composite_is_commutative_and_logical_and(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 17, 23)) < 0.5
    ab = composite_mask(a, b).numpy()
    assert np.array_equal(ab, composite_mask(b, a).numpy())
    assert np.array_equal(ab, a & b)


def test_mask_config_validation():
    for bad in (0, 100, -5, 120):
        with pytest.raises(ValueError):
            MaskConfig(error_percentile=bad)
        with pytest.raises(ValueError):
            MaskConfig(gradient_percentile=bad)
