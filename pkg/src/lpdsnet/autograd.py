"""Reverse-mode gradients of scalar losses with respect to named parameters.

The recording tape is torch's autograd graph; the nonsmooth nonlinearities
carry their own backward rules (see :mod:`lpdsnet.prox`). Complex gradients
are reported as ``d/dRe + 1j * d/dIm``, so descending along the real and
imaginary parts separately descends the real-valued loss.

:func:`central_differences` is an independent finite-difference oracle used
by the self-check and the tests.
"""

from __future__ import annotations

from typing import Callable

import torch
from torch import Tensor

__all__ = ["record_and_backprop", "central_differences", "relative_error", "NonFiniteGradient"]

Params = dict[str, Tensor]


class NonFiniteGradient(RuntimeError):
    pass


def record_and_backprop(loss_fn: Callable[[Params], Tensor], params: Params) -> tuple[float, Params]:
    """Evaluate ``loss_fn(params)`` and return ``(loss, gradients)``.

    Parameters that do not influence the loss get an all-zero gradient.
    """
    leaves = {k: v.detach().requires_grad_(True) for k, v in params.items()}
    loss = loss_fn(leaves)
    if loss.ndim != 0 or loss.is_complex():
        raise ValueError("loss must be a real scalar")
    if loss.requires_grad:
        names = list(leaves)
        grads = torch.autograd.grad(loss, [leaves[n] for n in names], allow_unused=True)
    else:
        names, grads = list(leaves), [None] * len(leaves)
    out = {}
    for n, g in zip(names, grads):
        g = torch.zeros_like(leaves[n]) if g is None else g
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for parameter {n!r}")
        out[n] = g
    return float(loss.detach()), out


def central_differences(loss_fn: Callable[[Params], Tensor], params: Params, step: float = 1e-6,
                        names=None) -> Params:
    """Central finite differences, one real component at a time."""
    base = {k: v.detach().clone() for k, v in params.items()}
    out = {}
    with torch.no_grad():
        for name in names or list(base):
            p = base[name]
            view = torch.view_as_real(p) if p.is_complex() else p
            g = torch.zeros_like(view)
            flat_v, flat_g = view.reshape(-1), g.reshape(-1)
            for i in range(flat_v.numel()):
                orig = flat_v[i].item()
                flat_v[i] = orig + step
                fp = float(loss_fn(base))
                flat_v[i] = orig - step
                fm = float(loss_fn(base))
                flat_v[i] = orig
                flat_g[i] = (fp - fm) / (2 * step)
            out[name] = torch.view_as_complex(g) if p.is_complex() else g
    return out


def relative_error(a: Tensor, b: Tensor) -> float:
    """``||a - b|| / max(||a||, ||b||)`` (0 when both vanish)."""
    num = torch.linalg.vector_norm(a - b).item()
    den = max(torch.linalg.vector_norm(a).item(), torch.linalg.vector_norm(b).item())
    return 0.0 if den == 0 else num / den
