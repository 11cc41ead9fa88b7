"""Multicoil Cartesian observation model.

Observations are stored zero-filled on the full k-space grid, i.e. as
``I_omega^T y`` with shape ``(C, H, W)``; entries outside the mask are exactly
zero. This keeps row masks and the 2D masks produced by SSDU splitting on the
same footing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import Tensor

from .spectral import fft2c, ifft2c

__all__ = [
    "SamplingMask",
    "CoilSensitivities",
    "KSpaceObservation",
    "EncodingOperator",
    "encode",
    "adjoint",
    "generate_mask",
    "add_noise",
    "estimate_noise",
    "operator_norm",
]


def round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


@dataclass(frozen=True)
class SamplingMask:
    """Set of sampled k-space locations.

    ``mask`` is a boolean ``(H, W)`` tensor. ``center_rows`` is the half-open
    row range ``(start, stop)`` of the fully sampled calibration block, or
    ``None`` when the mask was not built from rows.
    """

    mask: Tensor
    center_rows: tuple[int, int] | None = None

    def __post_init__(self):
        m = self.mask
        if m.dtype != torch.bool or m.ndim != 2:
            raise ValueError("mask must be a 2D boolean tensor")
        if not bool(m.any()):
            raise ValueError("mask must keep at least one location")
        if self.center_rows is not None:
            a, b = self.center_rows
            if not (0 <= a < b <= m.shape[0]) or not bool(m[a:b].all()):
                raise ValueError("center rows must be fully sampled and inside the image")

    @classmethod
    def from_rows(cls, height: int, width: int, rows, center_rows=None) -> SamplingMask:
        rows = sorted(set(int(r) for r in rows))
        if rows and not (0 <= rows[0] and rows[-1] < height):
            raise ValueError("row index out of range")
        m = torch.zeros(height, width, dtype=torch.bool)
        m[rows] = True
        return cls(m, center_rows)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.mask.shape)

    @property
    def kept_rows(self) -> list[int]:
        """Rows containing at least one sampled location."""
        return torch.nonzero(self.mask.any(dim=1)).flatten().tolist()

    @property
    def n_sampled(self) -> int:
        return int(self.mask.sum())

    @property
    def acceleration(self) -> float:
        return self.mask.numel() / self.n_sampled


@dataclass(frozen=True)
class CoilSensitivities:
    maps: Tensor  # (C, H, W) complex

    def __post_init__(self):
        if self.maps.ndim != 3 or not self.maps.is_complex():
            raise ValueError("sensitivity maps must be a complex (C, H, W) tensor")

    @property
    def coils(self) -> int:
        return self.maps.shape[0]


@dataclass(frozen=True)
class KSpaceObservation:
    """Zero-filled multicoil k-space ``(C, H, W)`` with its mask and noise level."""

    data: Tensor
    mask: SamplingMask
    sigma: float = 0.0

    def __post_init__(self):
        if self.data.ndim != 3 or tuple(self.data.shape[-2:]) != self.mask.shape:
            raise ValueError("observation shape does not match mask")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def sampled_rows(self) -> Tensor:
        """Per-coil sampled rows, shape ``(C, |rows|, W)`` (row masks only)."""
        return self.data[:, self.mask.kept_rows]


@dataclass(frozen=True)
class EncodingOperator:
    """E = I_omega F diag(s_c), stacked over coils."""

    mask: SamplingMask
    sens: CoilSensitivities
    _mask_c: Tensor = field(init=False, repr=False, compare=False)
    _mask_u: Tensor = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.sens.maps.shape[-2:]) != self.mask.shape:
            raise ValueError("sensitivity and mask shapes differ")
        object.__setattr__(self, "_mask_c", self.mask.mask.to(self.sens.maps.dtype))
        object.__setattr__(self, "_mask_u", torch.fft.ifftshift(self._mask_c, dim=(-2, -1)))

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.mask.shape

    def with_mask(self, mask: SamplingMask) -> EncodingOperator:
        return replace(self, mask=mask)

    def forward(self, x: Tensor) -> Tensor:
        if tuple(x.shape[-2:]) != self.image_shape:
            raise ValueError(f"image shape {tuple(x.shape)} does not match operator {self.image_shape}")
        return self._mask_c * fft2c(self.sens.maps * x.unsqueeze(-3))

    def adjoint(self, y: Tensor) -> Tensor:
        if tuple(y.shape[-3:]) != (self.sens.coils, *self.image_shape):
            raise ValueError(f"k-space shape {tuple(y.shape)} does not match operator")
        return (self.sens.maps.conj() * ifft2c(self._mask_c * y)).sum(dim=-3)

    def normal(self, x: Tensor) -> Tensor:
        # the inner fftshift/ifftshift pair cancels, so the mask is shifted once instead
        u = torch.fft.ifftshift(self.sens.maps * x.unsqueeze(-3), dim=(-2, -1))
        u = torch.fft.ifft2(self._mask_u * torch.fft.fft2(u, norm="ortho"), norm="ortho")
        return (self.sens.maps.conj() * torch.fft.fftshift(u, dim=(-2, -1))).sum(dim=-3)


def encode(x: Tensor, op: EncodingOperator, sigma: float = 0.0) -> KSpaceObservation:
    """Noiseless observation ``E x``."""
    return KSpaceObservation(op.forward(x), op.mask, sigma)


def adjoint(y: KSpaceObservation | Tensor, op: EncodingOperator) -> Tensor:
    """Zero-filled coil-combined image ``E^H y``."""
    data = y.data if isinstance(y, KSpaceObservation) else y
    return op.adjoint(data)


def generate_mask(
    height: int,
    width: int,
    acceleration: float,
    center_fraction: float,
    rng: np.random.Generator,
) -> SamplingMask:
    """Random Cartesian row mask with a fully sampled central band.

    Keeps ``round(height * center_fraction)`` contiguous central rows and then
    draws the remaining rows uniformly without replacement until
    ``round(height / acceleration)`` rows are kept. Rounding is half-up.
    """
    if acceleration < 1:
        raise ValueError("acceleration must be >= 1")
    if not 0 < center_fraction <= 1 / acceleration:
        raise ValueError("center_fraction must lie in (0, 1/acceleration]")
    n_keep = max(1, round_half_up(height / acceleration))
    n_center = max(1, round_half_up(height * center_fraction))
    if n_center > n_keep:
        raise ValueError(f"{n_center} center rows exceed the budget of {n_keep} rows")
    start = height // 2 - n_center // 2
    center = np.arange(start, start + n_center)
    others = np.setdiff1d(np.arange(height), center)
    extra = rng.choice(others, size=n_keep - n_center, replace=False)
    rows = np.concatenate([center, extra])
    return SamplingMask.from_rows(height, width, rows, (int(start), int(start + n_center)))


def add_noise(y: KSpaceObservation, sigma: float, rng: np.random.Generator) -> KSpaceObservation:
    """Add i.i.d. N(0, sigma^2) to the real and imaginary parts of every sampled entry."""
    return replace(y, data=y.data + sigma * unit_noise(y.data.shape, y.mask, rng, y.data.dtype), sigma=float(sigma))


def unit_noise(shape, mask: SamplingMask, rng: np.random.Generator, dtype=torch.complex128) -> Tensor:
    """Unit per-component complex Gaussian noise, zero off the mask."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    n = torch.complex(torch.from_numpy(re), torch.from_numpy(im)).to(dtype)
    return n * mask.mask.to(dtype)


def estimate_noise(y: KSpaceObservation | Tensor, mask: SamplingMask | None = None) -> float:
    """Robust noise level from the outermost sampled k-space rows.

    Rows whose distance from the center row exceeds the 75th percentile of
    sampled-row distances are pooled (real and imaginary parts, all coils) and
    the per-component standard deviation is estimated as MAD / 0.6745.
    """
    if isinstance(y, KSpaceObservation):
        data, mask = y.data, y.mask
    else:
        data = y
        if mask is None:
            raise ValueError("a mask is required for raw tensors")
    rows = np.asarray(mask.kept_rows)
    offsets = np.abs(rows - mask.shape[0] // 2)
    outer = rows[offsets > np.percentile(offsets, 75)]
    if outer.size == 0:
        outer = rows[offsets == offsets.max()]
    sel = mask.mask[outer]
    vals = data.detach()[:, outer][:, sel]
    e = torch.cat([vals.real.flatten(), vals.imag.flatten()]).cpu().numpy().astype(np.float64)
    mad = np.median(np.abs(e - np.median(e)))
    return float(mad / 0.6745)


def operator_norm(apply_normal, shape, iters: int = 200, dtype=torch.complex128, seed: int = 0) -> float:
    """Power-iteration estimate of ``sqrt(max eig(A^H A))`` given ``x -> A^H A x``."""
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(*shape, dtype=dtype, generator=g)
    x = x / torch.linalg.vector_norm(x)
    lam = 0.0
    for _ in range(iters):
        v = apply_normal(x)
        lam = torch.linalg.vector_norm(v).item()
        if lam == 0:
            return 0.0
        x = v / lam
    return float(np.sqrt(lam))
