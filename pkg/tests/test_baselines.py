import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mocaprecon.baselines import fill_mean, interpolate_linear
from mocaprecon.bvh import PoseSequence
from mocaprecon.corruption import GapSpec, MaskSequence, sample_mask
from mocaprecon.errors import DimensionMismatch
from mocaprecon.pipeline import fit_normalizer


def affine(frames, markers, rng):
    """Integer-coefficient straight-line trajectories, exact in floating point."""
    a = rng.integers(-50, 50, size=3 * markers).astype(float)
    b = rng.integers(-3, 4, size=3 * markers).astype(float)
    return a + np.arange(frames)[:, None] * b


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.5))
def test_interpolation_is_exact_on_lines(seed, rate):
    rng = np.random.default_rng(seed)
    x = affine(120, 5, rng)
    mask = sample_mask(120, 5, GapSpec(rate, 10, 5, seed))
    holed = np.where(mask.coordinates(), x, np.nan)
    np.testing.assert_array_equal(interpolate_linear(holed, mask), x)


def test_interpolation_between_neighbours():
    x = np.array([[0.0, 0, 0], [9, 9, 9], [9, 9, 9], [3, 6, 9]])
    present = np.array([[True], [False], [False], [True]])
    out = interpolate_linear(x, present)
    np.testing.assert_allclose(out[1], [1, 2, 3])
    np.testing.assert_allclose(out[2], [2, 4, 6])


def test_edges_extend_the_nearest_line():
    x = np.array([[7.0] * 3, [1, 1, 1], [2, 2, 2], [7] * 3])
    present = np.array([[False], [True], [True], [False]])
    np.testing.assert_allclose(interpolate_linear(x, present)[:, 0], [0, 1, 2, 3])
    # a single observation is held
    present = np.array([[False], [True], [False], [False]])
    np.testing.assert_allclose(interpolate_linear(x, present)[:, 0], [1, 1, 1, 1])


def test_never_observed_marker_takes_mean():
    x = np.ones((5, 6))
    present = np.ones((5, 2), dtype=bool)
    present[:, 1] = False
    mean = np.arange(6.0)
    out = interpolate_linear(x, present, mean)
    np.testing.assert_array_equal(out[:, 3:], np.tile([3.0, 4.0, 5.0], (5, 1)))
    np.testing.assert_array_equal(interpolate_linear(x, present)[:, 3:], 0)


def test_fill_mean(rng):
    train = rng.normal(size=(30, 6))
    norm = fit_normalizer([train])
    x = rng.normal(size=(4, 6))
    present = np.array([[True, False]] * 4)
    out = fill_mean(x, present, norm)
    np.testing.assert_array_equal(out[:, :3], x[:, :3])
    np.testing.assert_array_equal(out[:, 3:], np.tile(norm.mean_pose[3:], (4, 1)))


def test_accepts_pose_sequences(rng):
    seq = PoseSequence(["a", "b"], 120.0, 1.0, rng.normal(size=(10, 6)))
    mask = MaskSequence.full(10, 2)
    out = interpolate_linear(seq, mask)
    assert isinstance(out, PoseSequence)
    np.testing.assert_array_equal(out.positions, seq.positions)
    with pytest.raises(DimensionMismatch):
        interpolate_linear(seq, MaskSequence.full(10, 3))
