"""Unrolled networks: learned primal-dual splitting and the CDLNet baseline.

Both networks center the zero-filled image, ``ytil = E^H y - mu`` with
``mu = mean(E^H y)``, and add ``mu`` back at the output.

LPDSNet, layer ``k``::

    x+   = x - eta_k * (E^H E x - ytil + B_k z)
    xbar = x+ + theta_k * (x+ - x)
    z+   = clip(z + A_k^H xbar, lam0_k + lam1_k * sigma_hat)

CDLNet, layer ``k``::

    z+ = soft_threshold(z - A_k^H (E^H E B_k z - ytil), tau0_k + tau1_k * sigma_hat)

with output ``D z_K + mu``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch
from torch import Tensor

from .conv import ConvDictionary, analyze, init_dictionary, subband_shape, synthesize
from .mri import EncodingOperator, KSpaceObservation
from .prox import clip, soft_threshold

__all__ = [
    "LPDSNetParams",
    "CDLNetParams",
    "NonFiniteError",
    "lpdsnet_forward",
    "cdlnet_forward",
    "init_lpdsnet",
    "init_cdlnet",
    "forward",
    "init_params",
    "NET_KINDS",
]

NET_KINDS = ("lpdsnet", "cdlnet")


class NonFiniteError(RuntimeError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite activation in layer {layer}")
        self.layer = layer


class _Params:
    """Shared container behaviour: named tensors, cloning, parameter counts."""

    stride: int
    NONNEG: tuple[str, ...] = ()

    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "stride"}

    def replace_tensors(self, new: dict[str, Tensor]):
        kw = {**self.tensors(), **new}
        return type(self)(stride=self.stride, **kw)

    def clone(self):
        return self.replace_tensors({k: v.detach().clone() for k, v in self.tensors().items()})

    def requires_grad_(self, flag: bool = True):
        for t in self.tensors().values():
            t.requires_grad_(flag)
        return self

    def to(self, dtype):
        real = torch.empty((), dtype=dtype).real.dtype
        return self.replace_tensors(
            {k: v.detach().to(dtype if v.is_complex() else real) for k, v in self.tensors().items()}
        )

    def count(self) -> int:
        """Number of learnable real scalars (complex entries count twice)."""
        return sum(t.numel() * (2 if t.is_complex() else 1) for t in self.tensors().values())

    @property
    def layers(self) -> int:
        return self.A.shape[0]

    @property
    def subbands(self) -> int:
        return self.A.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.A.shape[-1]


@dataclass
class LPDSNetParams(_Params):
    A: Tensor  # (K, M, p, p) analysis kernels
    B: Tensor  # (K, M, p, p) synthesis kernels
    eta: Tensor  # (K,)
    theta: Tensor  # (K,)
    lam0: Tensor  # (K, M)
    lam1: Tensor  # (K, M)
    stride: int = 2

    NONNEG = ("eta", "lam0", "lam1")

    def thresholds(self, sigma_hat: float) -> Tensor:
        return self.lam0 + self.lam1 * sigma_hat


@dataclass
class CDLNetParams(_Params):
    A: Tensor  # (K, M, p, p)
    B: Tensor  # (K, M, p, p)
    tau0: Tensor  # (K, M)
    tau1: Tensor  # (K, M)
    D: Tensor  # (M, p, p) final synthesis dictionary
    stride: int = 2

    NONNEG = ("tau0", "tau1")

    def thresholds(self, sigma_hat: float) -> Tensor:
        return self.tau0 + self.tau1 * sigma_hat


def _centered(y, E: EncodingOperator):
    data = y.data if isinstance(y, KSpaceObservation) else y
    zf = E.adjoint(data)
    mu = zf.mean(dim=(-2, -1), keepdim=True)
    return zf - mu, mu


def _check(t: Tensor, k: int):
    if not torch.isfinite(t).all():
        raise NonFiniteError(k)


def lpdsnet_forward(y, E: EncodingOperator, sigma_hat: float, params: LPDSNetParams, probe=None) -> Tensor:
    """Image estimate of the learned primal-dual splitting network.

    If ``probe`` is a list, ``(pre_activation, threshold)`` pairs of every
    layer are appended to it (detached).
    """
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be nonnegative")
    ytil, mu = _centered(y, E)
    shape = E.image_shape
    s = params.stride
    lam = params.thresholds(sigma_hat)
    x = torch.zeros_like(ytil)
    z = ytil.new_zeros((params.subbands, *subband_shape(shape, s)))
    for k in range(params.layers):
        x_new = x - params.eta[k] * (E.normal(x) - ytil + synthesize(z, params.B[k], shape, s))
        xbar = x_new + params.theta[k] * (x_new - x)
        v = z + analyze(xbar, params.A[k], s)
        if probe is not None:
            probe.append((v.detach(), lam[k].detach()))
        z = clip(v, lam[k])
        x = x_new
        _check(z, k)
    return x + mu


def cdlnet_forward(y, E: EncodingOperator, sigma_hat: float, params: CDLNetParams, probe=None) -> Tensor:
    """Image estimate of the CDLNet baseline."""
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be nonnegative")
    ytil, mu = _centered(y, E)
    shape = E.image_shape
    s = params.stride
    tau = params.thresholds(sigma_hat)
    z = ytil.new_zeros((params.subbands, *subband_shape(shape, s)))
    for k in range(params.layers):
        r = E.normal(synthesize(z, params.B[k], shape, s)) - ytil
        v = z - analyze(r, params.A[k], s)
        if probe is not None:
            probe.append((v.detach(), tau[k].detach()))
        z = soft_threshold(v, tau[k])
        _check(z, k)
    return synthesize(z, params.D, shape, s) + mu


def _tied(D: ConvDictionary, K: int) -> Tensor:
    return D.kernels.unsqueeze(0).repeat(K, 1, 1, 1)


def init_lpdsnet(K: int, M: int, p: int, s: int, image_shape, rng: np.random.Generator,
                 dtype=torch.complex128) -> LPDSNetParams:
    """Classical-algorithm initialization.

    Every layer's analysis and synthesis kernels are the same unit-norm
    dictionary, ``eta = 1/2``, ``theta = 1``, ``lam0 = 1e-3`` and ``lam1 = 0``.
    """
    D = init_dictionary(M, p, s, rng, image_shape, dtype)
    real = D.kernels.real.dtype
    return LPDSNetParams(
        A=_tied(D, K),
        B=_tied(D, K),
        eta=torch.full((K,), 0.5, dtype=real),
        theta=torch.ones(K, dtype=real),
        lam0=torch.full((K, M), 1e-3, dtype=real),
        lam1=torch.zeros(K, M, dtype=real),
        stride=s,
    )


def init_cdlnet(K: int, M: int, p: int, s: int, image_shape, rng: np.random.Generator,
                dtype=torch.complex128) -> CDLNetParams:
    D = init_dictionary(M, p, s, rng, image_shape, dtype)
    real = D.kernels.real.dtype
    return CDLNetParams(
        A=_tied(D, K),
        B=_tied(D, K),
        tau0=torch.full((K, M), 1e-3, dtype=real),
        tau1=torch.zeros(K, M, dtype=real),
        D=D.kernels.clone(),
        stride=s,
    )


def init_params(kind: str, K: int, M: int, p: int, s: int, image_shape, rng, dtype=torch.complex128):
    if kind == "lpdsnet":
        return init_lpdsnet(K, M, p, s, image_shape, rng, dtype)
    if kind == "cdlnet":
        return init_cdlnet(K, M, p, s, image_shape, rng, dtype)
    raise ValueError(f"unknown network kind {kind!r}; expected one of {NET_KINDS}")


def forward(params, y, E: EncodingOperator, sigma_hat: float, probe=None) -> Tensor:
    if isinstance(params, LPDSNetParams):
        return lpdsnet_forward(y, E, sigma_hat, params, probe)
    return cdlnet_forward(y, E, sigma_hat, params, probe)


def boundary_margin(probe) -> float:
    """Smallest distance of a pre-activation magnitude from its threshold (or from 0)."""
    m = float("inf")
    for v, t in probe:
        mag = v.abs()
        t = t.reshape(*t.shape, 1, 1) if t.ndim else t
        m = min(m, float((mag - t).abs().min()), float(mag.min()))
    return m


def params_from_tensors(kind: str, tensors: dict[str, Tensor], stride: int):
    cls = {"lpdsnet": LPDSNetParams, "cdlnet": CDLNetParams}.get(kind)
    if cls is None:
        raise ValueError(f"unknown network kind {kind!r}")
    return cls(stride=stride, **tensors)


def kind_of(params) -> str:
    return "lpdsnet" if isinstance(params, LPDSNetParams) else "cdlnet"
