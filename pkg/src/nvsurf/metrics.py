"""Masked image-quality metrics: PSNR and single-scale SSIM."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve

from .errors import DimensionError, UndefinedMetricError

PSNR_CAP = 100.0
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2
_WIN = 11
_SIGMA = 1.5


def psnr(pred: np.ndarray, target: np.ndarray,
         mask: np.ndarray | None = None) -> float:
    """10*log10(1/MSE) over masked pixels on unit range, capped at 100 dB."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"psnr: shapes {pred.shape} vs {target.shape}")
    if mask is None:
        mask = np.ones(pred.shape[:2], dtype=bool)
    if not mask.any():
        raise UndefinedMetricError("psnr over an empty mask")
    mse = float(np.mean((pred[mask] - target[mask]) ** 2))
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_kernel():
    r = _WIN // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x ** 2) / (2 * _SIGMA ** 2))
    k = np.outer(g, g)
    return k / k.sum()


_KERNEL = _gaussian_kernel()


def _filter(img: np.ndarray) -> np.ndarray:
    return convolve(img, _KERNEL, mode="nearest")


def ssim(pred: np.ndarray, target: np.ndarray,
         mask: np.ndarray | None = None) -> float:
    """Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1=(0.01)^2,
    C2=(0.03)^2 on unit range, per channel then averaged.

    Only window centers in the cropped valid region whose window touches the
    mask contribute.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"ssim: shapes {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        pred = pred[:, :, None]
        target = target[:, :, None]
    H, W = pred.shape[:2]
    pad = _WIN // 2
    if H < _WIN or W < _WIN:
        raise DimensionError("ssim: window does not fit in the image")
    if mask is None:
        mask = np.ones((H, W), dtype=bool)
    # windows overlapping any masked pixel count; fully-outside windows don't
    touched = convolve(mask.astype(np.float64), np.ones((_WIN, _WIN)),
                       mode="constant") > 0
    sel = touched[pad:H - pad, pad:W - pad]
    if not sel.any():
        raise UndefinedMetricError("ssim over an empty mask")
    vals = []
    for c in range(pred.shape[2]):
        x, y = pred[:, :, c], target[:, :, c]
        mu_x = _filter(x)
        mu_y = _filter(y)
        sxx = _filter(x * x) - mu_x ** 2
        syy = _filter(y * y) - mu_y ** 2
        sxy = _filter(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * sxy + _SSIM_C2)
        den = (mu_x ** 2 + mu_y ** 2 + _SSIM_C1) * (sxx + syy + _SSIM_C2)
        smap = (num / den)[pad:H - pad, pad:W - pad]
        vals.append(float(smap[sel].mean()))
    return float(np.mean(vals))
