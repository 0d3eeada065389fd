"""Image-quality metrics on float images in [0, 1]."""

from __future__ import annotations

import numpy as np

from .ssim import ssim


def psnr(rendered: np.ndarray, target: np.ndarray) -> float:
    """10*log10(1/MSE) in dB; identical images give +inf."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch {rendered.shape} vs {target.shape}")
    mse = float(np.mean((rendered - target) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def metrics(rendered: np.ndarray, target: np.ndarray) -> dict[str, float]:
    return {"psnr": psnr(rendered, target), "ssim": ssim(rendered, target)}
