"""Centered, orthonormal 2D discrete Fourier transforms.

Both transforms act on the last two axes, so leading batch/coil axes are
carried along. The DC coefficient sits at index ``(H // 2, W // 2)`` and the
``1/sqrt(H*W)`` scaling makes the pair unitary.
"""

import torch
from torch import Tensor

__all__ = ["dft2_centered", "idft2_centered", "fft2c", "ifft2c"]

_AXES = (-2, -1)


def fft2c(x: Tensor) -> Tensor:
    """Unchecked centered forward DFT (hot path for the operators)."""
    x = torch.fft.ifftshift(x, dim=_AXES)
    return torch.fft.fftshift(torch.fft.fft2(x, norm="ortho"), dim=_AXES)


def ifft2c(k: Tensor) -> Tensor:
    """Unchecked centered inverse DFT."""
    k = torch.fft.ifftshift(k, dim=_AXES)
    return torch.fft.fftshift(torch.fft.ifft2(k, norm="ortho"), dim=_AXES)


def _check(x: Tensor) -> Tensor:
    if x.ndim < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ValueError(f"expected an image with at least 2 axes, got shape {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ValueError("input contains non-finite values")
    if not x.is_complex():
        x = x.to(torch.complex128)
    return x


def dft2_centered(img: Tensor) -> Tensor:
    """Orthonormal 2D DFT with the zero frequency moved to the array center.

    Parameters
    ----------
    img : Tensor
        Complex (or real, promoted to complex128) array of shape ``(..., H, W)``.

    Returns
    -------
    Tensor
        k-space of the same shape; ``norm(out) == norm(img)``.
    """
    return fft2c(_check(img))


def idft2_centered(k: Tensor) -> Tensor:
    """Inverse (and adjoint) of :func:`dft2_centered`."""
    return ifft2c(_check(k))
