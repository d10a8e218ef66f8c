import itertools

import numpy as np
import pytest

from nlsme.metrics import C1, PSNR_CAP, match_batch, psnr, psnr_matrix, ssim


def test_psnr_identities():
    img = np.random.default_rng(0).uniform(size=(1, 8, 8))
    assert psnr(img, img) == PSNR_CAP
    assert psnr(np.zeros((8, 8)), np.ones((8, 8))) == 0.0
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0, abs=1e-12)


def test_psnr_strictly_decreasing_in_mse():
    base = np.zeros((8, 8))
    values = [psnr(base, np.full((8, 8), e)) for e in (0.01, 0.05, 0.1, 0.3, 0.9)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))


def test_ssim_identity_and_symmetry(rng):
    a = rng.uniform(size=(1, 12, 10))
    b = rng.uniform(size=(1, 12, 10))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= ssim(a, b) <= 1.0


def test_ssim_constant_images_closed_form():
    # zero variance everywhere: ((2*0*1 + C1)(0 + C2)) / ((0 + 1 + C1)(0 + C2))
    expected = C1 / (1.0 + C1)
    assert ssim(np.zeros((8, 8)), np.ones((8, 8))) == pytest.approx(expected, rel=1e-12)


def test_ssim_window_guard():
    with pytest.raises(ValueError, match="window"):
        ssim(np.zeros((7, 9)), np.zeros((7, 9)))


def test_ssim_averages_channels(rng):
    a = rng.uniform(size=(2, 8, 8))
    b = rng.uniform(size=(2, 8, 8))
    assert ssim(a, b) == pytest.approx((ssim(a[0], b[0]) + ssim(a[1], b[1])) / 2)


def test_match_recovers_shuffle(rng):
    truth = rng.uniform(size=(5, 1, 8, 8))
    order = np.array([3, 0, 4, 1, 2])
    result = match_batch(truth[order], truth)
    np.testing.assert_array_equal(result.permutation, order)
    assert result.mean_psnr == PSNR_CAP
    assert result.mean_ssim == pytest.approx(1.0)
    assert not result.corrupted


def test_match_single_image(rng):
    a = rng.uniform(size=(1, 1, 8, 8))
    assert match_batch(a, a * 0.5).permutation.tolist() == [0]


def brute_force_best(scores):
    n = len(scores)
    return max(sum(scores[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


@pytest.mark.parametrize("seed", range(10))
def test_match_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    b = 3
    recon = rng.uniform(size=(b, 1, 8, 8))
    truth = rng.uniform(size=(b, 1, 8, 8))
    result = match_batch(recon, truth)
    scores = psnr_matrix(recon, truth)
    assert sorted(result.permutation.tolist()) == list(range(b))
    assert result.per_image_psnr.sum() == pytest.approx(brute_force_best(scores), abs=1e-9)


def test_match_size_mismatch(rng):
    with pytest.raises(ValueError):
        match_batch(rng.uniform(size=(2, 1, 8, 8)), rng.uniform(size=(3, 1, 8, 8)))
