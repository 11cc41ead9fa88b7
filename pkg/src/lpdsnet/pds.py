"""Classical primal-dual splitting for analysis-l1 regularized reconstruction.

Solves::

    min_x  1/2 ||y - E x||^2 + sum_m lam_m ||(D^H x)_m||_1

through the saddle point with the dual constrained to the lam-l1 ball::

    x+   = x - eta * (E^H (E x - y) + D z)
    xbar = x+ + theta * (x+ - x)
    z+   = clip(z + beta * D^H xbar, lam)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import torch
from torch import Tensor

from .conv import ConvDictionary, analyze, spectral_norm, synthesize
from .mri import EncodingOperator, KSpaceObservation
from .prox import clip

__all__ = ["PDSConfig", "SolveTrace", "DivergenceError", "objective", "check_stepsizes", "solve"]

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when an iterate becomes non-finite."""

    def __init__(self, iteration: int, where: str = "iterate"):
        super().__init__(f"non-finite {where} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class PDSConfig:
    eta: float
    beta: float
    theta: float = 1.0
    lam: float | Tensor = 0.0
    max_iters: int = 5000
    stop_tol: float = 1e-9

    def __post_init__(self):
        if self.eta <= 0 or self.beta <= 0:
            raise ValueError("step sizes must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if bool((torch.as_tensor(self.lam) < 0).any()):
            raise ValueError("lam must be nonnegative")

    @classmethod
    def largest_beta(cls, D, eta: float = 0.5, L_E: float = 1.0, image_shape=None, **kw) -> PDSConfig:
        """Config whose dual step meets the admissibility bound with equality."""
        dn = _dict_norm(D, image_shape)
        return cls(eta=eta, beta=(1.0 / eta - L_E) / dn**2, **kw)


@dataclass
class SolveTrace:
    objective: list[float] = field(default_factory=list)
    x: Tensor | None = None
    z: Tensor | None = None
    iterations: int = 0
    converged: bool = False
    admissible: bool = True
    last_change: float = math.inf


def _dict_norm(D, image_shape) -> float:
    if isinstance(D, ConvDictionary):
        if image_shape is None:
            raise ValueError("image_shape is needed to compute the dictionary norm")
        return spectral_norm(D, image_shape)
    return float(D)


def _data(y) -> Tensor:
    return y.data if isinstance(y, KSpaceObservation) else y


def objective(x: Tensor, y, E: EncodingOperator, D: ConvDictionary, lam) -> float:
    """Data misfit plus subband-weighted l1 norm of the analysis coefficients."""
    r = _data(y) - E.forward(x)
    lam = torch.as_tensor(lam, dtype=x.real.dtype)
    c = analyze(x, D).abs().sum(dim=(-2, -1))
    return float(0.5 * torch.linalg.vector_norm(r) ** 2 + (lam * c).sum())


def _normal_form_objective(x, rhs, E, D, lam) -> float:
    # 1/2 <x, E^H E x> - Re <x, rhs> + reg, i.e. the objective up to a constant
    quad = 0.5 * torch.linalg.vector_norm(E.forward(x)) ** 2 - torch.vdot(x.flatten(), rhs.flatten()).real
    return float(quad + (lam * analyze(x, D).abs().sum(dim=(-2, -1))).sum())


def check_stepsizes(cfg: PDSConfig, D, L_E: float = 1.0, image_shape=None, rtol: float = 1e-9) -> bool:
    """Whether ``(1/eta - L_E) / beta >= ||D||^2``.

    ``D`` is a dictionary (norm obtained by power iteration) or a precomputed
    norm. ``rtol`` absorbs the power-iteration error at the equality point.
    """
    dn = _dict_norm(D, image_shape)
    lhs = (1.0 / cfg.eta - L_E) / cfg.beta
    return lhs >= dn**2 * (1 - rtol)


def solve(
    y,
    E: EncodingOperator,
    D: ConvDictionary,
    cfg: PDSConfig,
    center: bool = False,
    record_objective: bool = True,
    L_E: float = 1.0,
) -> tuple[Tensor, SolveTrace]:
    """Run primal-dual splitting from ``x = 0, z = 0``.

    With ``center=True`` the data term uses ``E^H y - mean(E^H y)`` and the mean
    is added back to the result; this is the problem an untrained unrolled
    network solves.

    Returns the final primal iterate and a :class:`SolveTrace`.
    """
    shape = E.image_shape
    trace = SolveTrace()
    trace.admissible = check_stepsizes(cfg, D, L_E, image_shape=shape)
    if not trace.admissible:
        log.warning("step sizes eta=%g beta=%g violate the convergence condition", cfg.eta, cfg.beta)

    data = _data(y)
    with torch.no_grad():
        rhs = E.adjoint(data)
        mu = rhs.mean() if center else torch.zeros((), dtype=rhs.dtype)
        rhs = rhs - mu
        lam = torch.as_tensor(cfg.lam, dtype=rhs.real.dtype)
        x = torch.zeros_like(rhs)
        z = torch.zeros((D.subbands, *analyze(x, D).shape[-2:]), dtype=rhs.dtype)
        eta, beta, theta = cfg.eta, cfg.beta, cfg.theta
        for k in range(cfg.max_iters):
            grad = E.normal(x).sub_(rhs).add_(synthesize(z, D, shape))
            x_new = torch.add(x, grad, alpha=-eta)
            d = x_new - x
            z = clip(torch.add(z, analyze(torch.add(x_new, d, alpha=theta), D), alpha=beta), lam)
            change = torch.linalg.vector_norm(d).item() / max(torch.linalg.vector_norm(x).item(), 1e-30)
            # a non-finite primal step shows up in the change; a non-finite dual in the next step
            if not math.isfinite(change):
                raise DivergenceError(k + 1)
            x = x_new
            trace.iterations = k + 1
            trace.last_change = change
            if record_objective:
                if center:
                    trace.objective.append(_normal_form_objective(x, rhs, E, D, lam))
                else:
                    trace.objective.append(objective(x, data, E, D, lam))
            if change < cfg.stop_tol:
                trace.converged = True
                break
        if not torch.isfinite(z).all():
            raise DivergenceError(trace.iterations, "dual iterate")
        x = x + mu
    trace.x, trace.z = x, z
    return x, trace
