"""Synthetic multicoil data: ellipse phantoms, analytic coil maps, noisy samples."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import Tensor

from .mri import (
    CoilSensitivities,
    EncodingOperator,
    KSpaceObservation,
    generate_mask,
    unit_noise,
)

__all__ = ["TrainSample", "make_phantom", "make_sensitivities", "make_sample", "make_dataset"]


@dataclass(frozen=True)
class TrainSample:
    """One observation with its operator.

    ``noise`` is the unit-variance realization added to the clean data, so the
    same realization can be rescaled to any other noise level.
    """

    observation: KSpaceObservation
    encoder: EncodingOperator
    ground_truth: Tensor | None
    sigma: float
    noise: Tensor | None = None

    def __post_init__(self):
        if abs(self.sigma - self.observation.sigma) > 0:
            raise ValueError("sample sigma disagrees with its observation")

    def rescaled(self, sigma: float) -> TrainSample:
        """Same mask and noise realization at a different noise level."""
        if self.noise is None:
            raise ValueError("sample has no stored noise realization")
        if self.ground_truth is not None:
            clean = self.encoder.forward(self.ground_truth)
        elif self.sigma > 0:
            clean = self.observation.data - self.sigma * self.noise
        else:
            clean = self.observation.data
        obs = KSpaceObservation(clean + sigma * self.noise, self.observation.mask, float(sigma))
        return replace(self, observation=obs, sigma=float(sigma))


def _grid(size: int):
    c = (np.arange(size) - size // 2) / (size / 2)
    return np.meshgrid(c, c, indexing="ij")


def make_phantom(size: int, rng: np.random.Generator, edge_width: float = 1.0) -> Tensor:
    """Random complex ellipse phantom with peak magnitude 1.

    The first ellipse is a large "head" outline; 4 to 11 smaller ellipses with
    intensities in [0.2, 1] are added inside it. Edges are smoothed over about
    ``edge_width`` pixels and the phase is a random quadratic polynomial.
    """
    yy, xx = _grid(size)
    n = int(rng.integers(5, 13))
    width = edge_width * 2.0 / size
    img = np.zeros((size, size))
    for i in range(n):
        if i == 0:
            a, b = rng.uniform(0.7, 0.9, size=2)
            cy, cx = rng.uniform(-0.05, 0.05, size=2)
            amp = rng.uniform(0.2, 0.5)
        else:
            a, b = rng.uniform(0.08, 0.45, size=2)
            cy, cx = rng.uniform(-0.4, 0.4, size=2)
            amp = rng.uniform(0.2, 1.0)
        th = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
        v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
        r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        # signed distance to the boundary, approximately in grid units
        dist = (1.0 - r) * min(a, b)
        img += amp / (1.0 + np.exp(-dist / (0.5 * width)))
    coef = rng.uniform(-np.pi / 2, np.pi / 2, size=6) * np.array([1, 0.5, 0.5, 0.25, 0.25, 0.25])
    phase = coef[0] + coef[1] * xx + coef[2] * yy + coef[3] * xx * yy + coef[4] * xx**2 + coef[5] * yy**2
    out = img * np.exp(1j * phase)
    out /= np.abs(out).max()
    return torch.from_numpy(out)


def make_sensitivities(size: int, coils: int, rng: np.random.Generator) -> CoilSensitivities:
    """Smooth Gaussian-bump coil profiles around the border, normalized so
    that the per-pixel sum of squared magnitudes is exactly one."""
    if coils < 1:
        raise ValueError("need at least one coil")
    yy, xx = _grid(size)
    off = rng.uniform(0, 2 * np.pi)
    maps = []
    for c in range(coils):
        ang = off + 2 * np.pi * c / coils + rng.uniform(-0.2, 0.2)
        cy, cx = 1.1 * np.sin(ang), 1.1 * np.cos(ang)
        w = rng.uniform(0.7, 1.0)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * w**2))
        ph = rng.uniform(-np.pi, np.pi) + rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy
        maps.append(mag * np.exp(1j * ph))
    maps = np.stack(maps)
    maps /= np.sqrt((np.abs(maps) ** 2).sum(axis=0, keepdims=True))
    return CoilSensitivities(torch.from_numpy(maps))


def make_sample(size, coils, accel, center_frac, sigma, rng, keep_ground_truth=True) -> TrainSample:
    x = make_phantom(size, rng)
    sens = make_sensitivities(size, coils, rng)
    mask = generate_mask(size, size, accel, center_frac, rng)
    E = EncodingOperator(mask, sens)
    noise = unit_noise((coils, size, size), mask, rng)
    obs = KSpaceObservation(E.forward(x) + sigma * noise, mask, float(sigma))
    return TrainSample(obs, E, x if keep_ground_truth else None, float(sigma), noise)


def make_dataset(
    n_samples: int,
    size: int,
    coils: int,
    accel: float,
    center_frac: float,
    sigma_range: tuple[float, float],
    rng: np.random.Generator,
    keep_ground_truth: bool = True,
) -> list[TrainSample]:
    """Independent samples, each with its own phantom, coil maps, mask and
    noise level drawn uniformly from ``sigma_range``."""
    lo, hi = sigma_range
    if not 0 <= lo <= hi:
        raise ValueError("invalid sigma range")
    out = []
    for _ in range(n_samples):
        sigma = float(rng.uniform(lo, hi))
        out.append(make_sample(size, coils, accel, center_frac, sigma, rng, keep_ground_truth))
    return out
