import numpy as np
import pytest

from aplt import augment
from aplt.errors import InvalidParameterError


class TestWeak:
    def test_zero_sigma_is_identity(self):
        cfg = augment.AugmentConfig(weak_sigma=0.0, strong_sigma=0.0,
                                    strong_mask_prob=0.0)
        x = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(augment.weak(x, cfg, np.random.default_rng(0)), x)

    def test_noise_scale_matches_sigma(self):
        cfg = augment.AugmentConfig(weak_sigma=0.05)
        rng = np.random.default_rng(1)
        draws = np.stack([augment.weak(np.zeros(8), cfg, rng) for _ in range(10_000)])
        stds = draws.std(axis=0)
        assert np.all(np.abs(stds - 0.05) < 0.05 * 0.05)

    def test_same_rng_state_same_output(self):
        cfg = augment.AugmentConfig()
        x = np.arange(5.0)
        a = augment.weak(x, cfg, np.random.default_rng(42))
        b = augment.weak(x, cfg, np.random.default_rng(42))
        assert np.array_equal(a, b)


class TestStrong:
    def test_no_noise_no_mask_is_identity(self):
        cfg = augment.AugmentConfig(weak_sigma=0.0, strong_sigma=0.0,
                                    strong_mask_prob=0.0)
        x = np.array([0.5, 0.5, -1.0])
        assert np.array_equal(augment.strong(x, cfg, np.random.default_rng(3)), x)

    def test_full_mask_zeroes_everything(self):
        cfg = augment.AugmentConfig(strong_mask_prob=1.0)
        out = augment.strong(np.ones(50), cfg, np.random.default_rng(5))
        assert np.array_equal(out, np.zeros(50))

    def test_masked_count_within_binomial_band(self):
        cfg = augment.AugmentConfig(strong_mask_prob=0.1)
        out = augment.strong(np.ones(1000), cfg, np.random.default_rng(9))
        zeroed = int((out == 0.0).sum())
        assert 70 <= zeroed <= 130  # 100 +/- 3 sigma of Binomial(1000, .1)

    def test_batch_shape_preserved(self):
        cfg = augment.AugmentConfig()
        out = augment.strong(np.zeros((7, 4)), cfg, np.random.default_rng(0))
        assert out.shape == (7, 4)


def test_strong_perturbs_more_than_weak_on_average():
    cfg = augment.AugmentConfig()  # defaults: 0.05 / 0.20 / 0.10
    rng = np.random.default_rng(17)
    x = rng.normal(size=16)
    weak_norms, strong_norms = [], []
    for _ in range(1000):
        weak_norms.append(np.linalg.norm(augment.weak(x, cfg, rng) - x))
        strong_norms.append(np.linalg.norm(augment.strong(x, cfg, rng) - x))
    assert np.mean(strong_norms) > np.mean(weak_norms)


@pytest.mark.parametrize("kwargs", [
    dict(weak_sigma=-0.1),
    dict(strong_sigma=-1.0),
    dict(strong_mask_prob=1.5),
    dict(weak_sigma=0.5, strong_sigma=0.1),
])
def test_invalid_configs(kwargs):
    with pytest.raises(InvalidParameterError):
        augment.AugmentConfig(**kwargs)
