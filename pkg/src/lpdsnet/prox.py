"""Complex magnitude clipping and soft-thresholding with explicit backward rules.

Thresholds are per subband: for a stack ``z`` of shape ``(..., M, h, w)`` the
threshold vector has shape ``(M,)``.

Nonsmooth points follow fixed conventions. Clip uses the identity branch when
``|z| == lam`` and the zero Jacobian when ``lam == 0``. Soft-thresholding
uses the zero branch when ``|z| == tau``.
"""

from contextlib import contextmanager

import torch
from torch import Tensor

__all__ = ["clip", "soft_threshold", "inject_clip_backward_fault"]

_FAULT = {"clip_backward": 0.0}


@contextmanager
def inject_clip_backward_fault(scale: float = 1e-2):
    """Test hook: perturb the clip backward pass by a relative ``scale``."""
    old = _FAULT["clip_backward"]
    _FAULT["clip_backward"] = scale
    try:
        yield
    finally:
        _FAULT["clip_backward"] = old


def _expand(lam: Tensor, z: Tensor) -> Tensor:
    lam = torch.as_tensor(lam, dtype=z.real.dtype, device=z.device)
    if lam.ndim == 0:
        return lam
    return lam.reshape(*lam.shape, 1, 1)


def _unit(z: Tensor, mag: Tensor) -> Tensor:
    # componentwise division stays finite for subnormal magnitudes, complex division does not
    m = torch.where(mag > 0, mag, torch.ones_like(mag))
    return torch.complex(z.real / m, z.imag / m)


def _reduce_to(g: Tensor, lam: Tensor) -> Tensor:
    # sum a per-entry gradient back onto the threshold's shape
    if lam.ndim == 0:
        return g.sum()
    return g.sum(dim=(-2, -1)).reshape(-1, *lam.shape).sum(dim=0)


class _Clip(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z, lam):
        lam_e = _expand(lam, z)
        mag = z.abs()
        u = _unit(z, mag)
        clipped = (mag > lam_e) | (lam_e == 0)
        out = torch.where(clipped, lam_e * u, z)
        ctx.save_for_backward(z, lam, mag, u, clipped)
        return out

    @staticmethod
    def backward(ctx, g):
        z, lam, mag, u, clipped = ctx.saved_tensors
        lam_e = _expand(lam, z)
        radial = u * (u.conj() * g).real
        safe = torch.where(clipped & (mag > 0), mag, torch.ones_like(mag))
        gz_clip = (lam_e / safe) * (g - radial)
        gz = torch.where(clipped, gz_clip, g)
        if _FAULT["clip_backward"]:
            gz = gz * (1 + _FAULT["clip_backward"])
        glam = None
        if ctx.needs_input_grad[1]:
            glam = _reduce_to(torch.where(clipped, (g.conj() * u).real, torch.zeros_like(mag)), lam)
        return gz, glam


class _SoftThreshold(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z, tau):
        tau_e = _expand(tau, z)
        mag = z.abs()
        u = _unit(z, mag)
        active = mag > tau_e
        out = torch.where(active, (mag - tau_e) * u, torch.zeros_like(z))
        ctx.save_for_backward(z, tau, mag, u, active)
        return out

    @staticmethod
    def backward(ctx, g):
        z, tau, mag, u, active = ctx.saved_tensors
        tau_e = _expand(tau, z)
        radial = u * (u.conj() * g).real
        safe = torch.where(active, mag, torch.ones_like(mag))
        gz = torch.where(active, g - (tau_e / safe) * (g - radial), torch.zeros_like(g))
        gtau = None
        if ctx.needs_input_grad[1]:
            gtau = _reduce_to(torch.where(active, -(g.conj() * u).real, torch.zeros_like(mag)), tau)
        return gz, gtau


def _needs_graph(*ts) -> bool:
    return torch.is_grad_enabled() and any(t.requires_grad for t in ts)


def clip(z: Tensor, lam) -> Tensor:
    """Project each complex entry onto the disc of radius ``lam`` (phase kept).

    ``lam`` is a scalar or a nonnegative ``(M,)`` vector matching the subband axis.
    """
    lam = torch.as_tensor(lam, dtype=z.real.dtype, device=z.device)
    if _needs_graph(z, lam):
        return _Clip.apply(z, lam)
    lam_e = _expand(lam, z)
    # lam / max(|z|, lam) is exactly 1 inside the disc and 0 where lam == 0
    den = torch.maximum(z.abs(), lam_e)
    scale = torch.where(den > 0, lam_e / torch.where(den > 0, den, torch.ones_like(den)), torch.zeros_like(den))
    return z * scale


def soft_threshold(z: Tensor, tau) -> Tensor:
    """Shrink complex magnitudes by ``tau`` and floor at zero, keeping the phase."""
    return _SoftThreshold.apply(z, torch.as_tensor(tau, dtype=z.real.dtype, device=z.device))
