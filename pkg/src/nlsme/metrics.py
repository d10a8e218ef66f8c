"""Reconstruction quality: PSNR, SSIM and batch matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import linear_sum_assignment

PSNR_CAP = 100.0
CORRUPTION_PSNR = 18.0
SSIM_WINDOW = 8
C1 = 0.01**2
C2 = 0.03**2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for images with range [0, 1]."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _ssim_2d(a, b, window):
    wa = sliding_window_view(a, (window, window))
    wb = sliding_window_view(b, (window, window))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a**2
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b**2
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))


def ssim(a, b, window=SSIM_WINDOW):
    """Mean SSIM over all window positions (stride 1), averaged over channels.

    Accepts (H, W) or (C, H, W) images.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W) or (C, H, W), got {a.shape}")
    if a.shape[1] < window or a.shape[2] < window:
        raise ValueError(f"image {a.shape[1:]} smaller than the {window}x{window} window")
    return float(np.mean([_ssim_2d(x, y, window) for x, y in zip(a, b)]))


@dataclass
class MatchResult:
    permutation: np.ndarray
    per_image_psnr: np.ndarray
    per_image_ssim: np.ndarray

    @property
    def mean_psnr(self):
        return float(np.mean(self.per_image_psnr))

    @property
    def mean_ssim(self):
        return float(np.mean(self.per_image_ssim))

    @property
    def corrupted(self):
        return self.mean_psnr < CORRUPTION_PSNR


def psnr_matrix(recon, truth):
    return np.array([[psnr(r, t) for t in truth] for r in recon])


def match_batch(recon, truth):
    """Pair reconstructions with ground truth to maximize total PSNR.

    ``permutation[i]`` is the ground-truth index assigned to reconstruction
    ``i``.  Arguments are image arrays (B, C, H, W) or ImageBatch objects.
    """
    recon = getattr(recon, "images", recon)
    truth = getattr(truth, "images", truth)
    recon = np.asarray(recon, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recon.shape != truth.shape:
        raise ValueError(f"batch mismatch: {recon.shape} vs {truth.shape}")
    scores = psnr_matrix(recon, truth)
    rows, cols = linear_sum_assignment(scores, maximize=True)
    perm = cols[np.argsort(rows)]
    per_psnr = scores[np.arange(len(perm)), perm]
    per_ssim = np.array([ssim(recon[i], truth[j]) for i, j in enumerate(perm)])
    return MatchResult(perm, per_psnr, per_ssim)
