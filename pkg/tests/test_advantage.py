import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stablereinforce.advantage import (
    advantage_filter,
    compute_advantages,
    returns_to_go,
    z_normalize,
)

# hand oracle for the 255-ones / one-zero batch, population std plus the 1e-8 guard
P = 255 / 256
SD = np.sqrt(P * (1 - P))
Z_ZERO = (0 - P) / (SD + 1e-8)  # -15.9687...
Z_ONE = (1 - P) / (SD + 1e-8)  # 0.0626...

finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestReturnsToGo:
    def test_suffix_sums(self):
        np.testing.assert_array_equal(returns_to_go([0, 0, 0, 2.0], 1.0), [2, 2, 2, 2])
        np.testing.assert_array_equal(returns_to_go([1.0], 0.5), [1.0])
        np.testing.assert_allclose(returns_to_go([-0.02, 1.01], 1.0), [0.99, 1.01], atol=1e-12)

    def test_discount(self):
        np.testing.assert_allclose(returns_to_go([1.0, 0.0, 4.0], 0.5), [2.0, 2.0, 4.0])

    @pytest.mark.parametrize("gamma", [0.0, -0.1, 1.5])
    def test_bad_gamma(self, gamma):
        with pytest.raises(ValueError):
            returns_to_go([1.0], gamma)

    def test_empty(self):
        with pytest.raises(ValueError):
            returns_to_go([], 1.0)


class TestZNormalize:
    def test_imbalanced_batch(self):
        z = z_normalize([1.0] * 255 + [0.0])
        assert z[-1] == pytest.approx(-15.96, abs=0.01)
        assert z[-1] == pytest.approx(Z_ZERO, abs=1e-9)

    def test_constant(self):
        np.testing.assert_array_equal(z_normalize(np.full(4, 2.5)), 0.0)

    def test_symmetric_pair(self):
        np.testing.assert_allclose(z_normalize([-1.0, 1.0]), [-1.0, 1.0], atol=1e-6)

    def test_too_short(self):
        with pytest.raises(ValueError):
            z_normalize([1.0])

    @given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-1e3, 1e3)))
    def test_moments(self, x):
        z = z_normalize(x)
        sd = x.std()
        # rounding noise in a constant batch is divided by the 1e-8 guard, so only bound it loosely
        assert abs(z.mean()) < 1e-5
        if sd > 1e-3:
            assert abs(z.mean()) < 1e-9
            assert abs(z.std() - sd / (sd + 1e-8)) < 1e-6


class TestFilter:
    def test_outlier(self):
        filtered, mask = advantage_filter([Z_ZERO, 2.9, 3.0, -3.0, 3.0000001])
        np.testing.assert_array_equal(filtered, [0.0, 2.9, 3.0, -3.0, 0.0])
        np.testing.assert_array_equal(mask, [0, 1, 1, 1, 0])

    @given(arrays(np.float64, st.integers(0, 50), elements=finite))
    def test_idempotent_and_bounded(self, z):
        f1, m1 = advantage_filter(z)
        f2, m2 = advantage_filter(f1)
        np.testing.assert_array_equal(f1, f2)
        assert np.all(np.abs(f1) <= 3)
        np.testing.assert_array_equal(m1 == 0, np.abs(z) > 3)
        np.testing.assert_array_equal(m1 == 0, (f1 == 0) & (z != 0))


def _batch(finals, lengths):
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    zeros = np.zeros(offsets[-1])
    return finals, zeros, zeros, offsets


class TestCompute:
    def test_identical_trajectories(self):
        adv = compute_advantages(*_batch([1.5] * 4, [3] * 4))
        np.testing.assert_array_equal(adv.filtered, 0.0)

    def test_reinforce_pp_mode_keeps_outlier(self):
        adv = compute_advantages(*_batch([1.0] * 255 + [0.0], [1] * 256), filter=False)
        assert adv.filtered[-1] == pytest.approx(-15.96, abs=0.01)
        assert adv.mask.sum() == 256

    def test_stable_mode_masks_outlier(self):
        adv = compute_advantages(*_batch([1.0] * 255 + [0.0], [1] * 256), filter=True)
        assert adv.filtered[-1] == 0.0 and adv.mask[-1] == 0
        np.testing.assert_allclose(adv.filtered[:-1], Z_ONE, atol=1e-9)
        assert Z_ONE == pytest.approx(0.0627, abs=0.001)
        assert adv.filtered_fraction == pytest.approx(1 / 256)

    def test_joint_normalization_over_tokens(self):
        adv = compute_advantages(*_batch([2.0, 0.0, 1.0], [2, 3, 1]))
        raw = np.array([2, 2, 0, 0, 0, 1.0])
        np.testing.assert_allclose(adv.standardized, (raw - raw.mean()) / (raw.std() + 1e-8))

    def test_raw_mode(self):
        adv = compute_advantages(*_batch([2.0, 0.0], [2, 1]), normalize=False)
        np.testing.assert_array_equal(adv.filtered, [2, 2, 0])
        np.testing.assert_array_equal(adv.mask, 1)

    @given(st.lists(st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0]), min_size=2, max_size=30),
           st.data())
    def test_constant_within_trajectory(self, finals, data):
        lengths = data.draw(st.lists(st.integers(1, 6), min_size=len(finals),
                                     max_size=len(finals)))
        adv = compute_advantages(*_batch(finals, lengths))
        for i, (a, b) in enumerate(zip(adv.offsets[:-1], adv.offsets[1:])):
            assert np.all(adv.raw[a:b] == finals[i])
        assert np.max(np.abs(adv.filtered)) <= 3
