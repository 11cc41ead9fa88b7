"""Image quality metrics on magnitude images."""

import numpy as np
from scipy.signal import convolve2d

__all__ = ["psnr", "psnr_flagged", "ssim", "gaussian_window", "PSNR_CAP"]

PSNR_CAP = 99.0


def _mag(a) -> np.ndarray:
    if hasattr(a, "detach"):
        a = a.detach().cpu().numpy()
    return np.abs(np.asarray(a)).astype(np.float64)


def psnr_flagged(estimate, reference) -> tuple[float, bool]:
    """PSNR in dB and a flag set when the images are identical (value capped)."""
    e, r = _mag(estimate), _mag(reference)
    mse = np.mean((e - r) ** 2)
    if mse == 0:
        return PSNR_CAP, True
    return float(min(20 * np.log10(r.max() / np.sqrt(mse)), PSNR_CAP)), False


def psnr(estimate, reference) -> float:
    """``20 log10(peak / rmse)`` with ``peak = max |reference|``."""
    return psnr_flagged(estimate, reference)[0]


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(estimate, reference, win_size: int = 11, win_sigma: float = 1.5,
         K1: float = 0.01, K2: float = 0.03) -> float:
    """Mean structural similarity over all fully contained windows.

    Dynamic range is the reference peak magnitude.
    """
    x, y = _mag(estimate), _mag(reference)
    if x.shape != y.shape:
        raise ValueError("images must have the same shape")
    L = y.max()
    C1, C2 = (K1 * L) ** 2, (K2 * L) ** 2
    w = gaussian_window(win_size, win_sigma)

    def filt(a):
        return convolve2d(a, w, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx**2
    syy = filt(y * y) - my**2
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + C1) * (2 * sxy + C2)
    den = (mx**2 + my**2 + C1) * (sxx + syy + C2)
    return float(np.mean(num / den))
