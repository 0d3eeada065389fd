"""SSIM with an analytic gradient.

11x11 Gaussian window (sigma 1.5), standard C1/C2 constants for unit
data range, channels treated independently, local statistics via
zero-padded separable convolution. The window is symmetric and the
padding is zero, so the convolution is its own adjoint — which the
backward pass leans on.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve1d

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def _window() -> np.ndarray:
    half = (WINDOW_SIZE - 1) / 2.0
    x = np.arange(WINDOW_SIZE) - half
    w = np.exp(-(x**2) / (2.0 * WINDOW_SIGMA**2))
    return w / w.sum()

_W = _window()


def _blur(img: np.ndarray) -> np.ndarray:
    out = convolve1d(img, _W, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, _W, axis=1, mode="constant", cval=0.0)


def ssim_forward(x: np.ndarray, y: np.ndarray):
    """Mean SSIM plus the intermediates the backward pass needs."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mu_x, mu_y = _blur(x), _blur(y)
    var_x = _blur(x * x) - mu_x**2
    var_y = _blur(y * y) - mu_y**2
    cov_xy = _blur(x * y) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + C1
    a2 = 2.0 * cov_xy + C2
    b1 = mu_x**2 + mu_y**2 + C1
    b2 = var_x + var_y + C2
    smap = (a1 * a2) / (b1 * b2)
    cache = (x, y, mu_x, mu_y, a1, a2, b1, b2)
    return float(smap.mean()), cache


def ssim_backward(cache, d_mean: float) -> np.ndarray:
    """Gradient of (d_mean * mean SSIM) w.r.t. the first image."""
    x, y, mu_x, mu_y, a1, a2, b1, b2 = cache
    g = d_mean / x.size  # d(mean)/d(smap entry)
    # smap = a1 a2 / (b1 b2); x enters through mu_x, var_x, cov_xy
    d_mu = g * (2.0 * mu_y * a2 * b1 - 2.0 * mu_x * a1 * a2) / (b1**2 * b2)
    d_var = g * (-(a1 * a2) / (b1 * b2**2))
    d_cov = g * (2.0 * a1 / (b1 * b2))
    # var_x = blur(x^2) - mu_x^2 and cov = blur(xy) - mu_x mu_y fold into mu_x
    d_mu = d_mu - 2.0 * mu_x * d_var - mu_y * d_cov
    return _blur(d_mu) + 2.0 * x * _blur(d_var) + y * _blur(d_cov)


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    value, _ = ssim_forward(np.asarray(x, dtype=np.float64),
                            np.asarray(y, dtype=np.float64))
    return value
