"""Fusion quality metrics: MEF-SSIM against the input exposures, plus
plain PSNR / SSIM oracles for ground-truth comparisons."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import gaussian_filter

from .errors import ValidationError
from .imgcore import ImageRGB, luminance

MEF_WINDOW = 8
MEF_C = 0.03**2
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_WIN = 11
EPS = 1e-12


def _patches(y: np.ndarray, window: int) -> np.ndarray:
    views = sliding_window_view(y, (window, window))
    return views.reshape(-1, window * window)


def mef_ssim(fused: ImageRGB, inputs, window: int = MEF_WINDOW, c: float = MEF_C) -> float:
    """Structure-retention score of a fused image against its exposures.

    Luminance only, sliding windows (stride 1). Per window the desired
    patch takes the maximum input contrast and the norm-weighted average
    of the inputs' mean-free structures; similarity to the fused patch is
    the mean-free SSIM term.
    """
    if not inputs:
        raise ValidationError("mef_ssim needs at least one input image")
    shape = fused.data.shape
    if any(img.data.shape != shape for img in inputs):
        raise ValidationError("all images must share dimensions")
    if fused.height < window or fused.width < window:
        raise ValidationError("image smaller than the analysis window")

    n = window * window
    yf = _patches(luminance(fused), window)
    yf = yf - yf.mean(axis=1, keepdims=True)

    norms = []
    sbar = np.zeros_like(yf)
    for img in inputs:
        p = _patches(luminance(img), window)
        p = p - p.mean(axis=1, keepdims=True)
        nk = np.linalg.norm(p, axis=1, keepdims=True)
        norms.append(nk)
        # weight ||x~|| times structure x~/||x~|| collapses to x~ itself
        sbar = sbar + p
    c_hat = np.max(np.concatenate(norms, axis=1), axis=1, keepdims=True)
    sbar_norm = np.linalg.norm(sbar, axis=1, keepdims=True)
    x_hat = c_hat * sbar / (sbar_norm + EPS)

    num = 2.0 * np.sum(x_hat * yf, axis=1) / n + c
    den = (np.sum(x_hat**2, axis=1) + np.sum(yf**2, axis=1)) / n + c
    return float(np.mean(num / den))


def psnr(a: ImageRGB, b: ImageRGB) -> float:
    if a.data.shape != b.data.shape:
        raise ValidationError("psnr inputs must share dimensions")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(mse))


def ssim(a: ImageRGB, b: ImageRGB, sigma: float = SSIM_SIGMA) -> float:
    """Standard single-scale SSIM with an 11-tap Gaussian window, averaged
    over channels."""
    if a.data.shape != b.data.shape:
        raise ValidationError("ssim inputs must share dimensions")
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    truncate = ((SSIM_WIN - 1) / 2) / sigma
    blur = lambda x: gaussian_filter(x, sigma, truncate=truncate, mode="reflect")
    scores = []
    for ch in range(3):
        x, y = a.data[..., ch], b.data[..., ch]
        mx, my = blur(x), blur(y)
        vx = blur(x * x) - mx * mx
        vy = blur(y * y) - my * my
        cov = blur(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * cov + c2)) / (
            (mx * mx + my * my + c1) * (vx + vy + c2)
        )
        scores.append(np.mean(s))
    return float(np.mean(scores))
