"""Supervised and SSDU training of the unrolled networks.

Every random draw in a training step comes from a generator seeded with
``(seed, step)``, so a run is a pure function of the dataset and the seed and
can be resumed from any checkpoint without replaying earlier steps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import Tensor

from .autograd import record_and_backprop
from .metrics import psnr
from .mri import SamplingMask, estimate_noise
from .nets import forward, init_params
from .simdata import TrainSample

__all__ = [
    "SSDUSplit",
    "TrainConfig",
    "AdamState",
    "TrainResult",
    "TrainingError",
    "ssdu_split",
    "mixed_l1l2_loss",
    "ssdu_step_loss",
    "supervised_step_loss",
    "cosine_lr",
    "adam_update",
    "project_params",
    "train",
    "reconstruct",
]

log = logging.getLogger(__name__)

LOSS_MODES = ("ssdu", "supervised")


class TrainingError(RuntimeError):
    def __init__(self, msg: str, step: int):
        super().__init__(f"step {step}: {msg}")
        self.step = step


@dataclass(frozen=True)
class SSDUSplit:
    """Disjoint input (``xi``) and target (``lambda_set``) subsets of the sampled locations."""

    xi: SamplingMask
    lambda_set: SamplingMask


def _center_block(shape, size: int) -> Tensor:
    H, W = shape
    b = torch.zeros(H, W, dtype=torch.bool)
    r0, c0 = H // 2 - size // 2, W // 2 - size // 2
    b[max(r0, 0) : r0 + size, max(c0, 0) : c0 + size] = True
    return b


def ssdu_split(
    omega: SamplingMask,
    keep_fraction: float = 0.8,
    center_size: int = 10,
    rng: np.random.Generator | None = None,
    max_attempts: int = 100,
) -> SSDUSplit:
    """Split sampled k-space locations into network input and loss target.

    Sampled locations inside the ``center_size x center_size`` block around DC
    always go to the input set. Every other sampled location goes to the
    input set with probability ``keep_fraction`` and to the target set
    otherwise. Draws with an empty target set are repeated.
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    rng = rng if rng is not None else np.random.default_rng()
    center = _center_block(omega.shape, center_size) & omega.mask
    free = omega.mask & ~center
    if not bool(free.any()):
        raise ValueError("every sampled location lies in the preserved center; nothing to hold out")
    free_np = free.numpy()
    for _ in range(max_attempts):
        u = rng.random(omega.shape)
        to_target = torch.from_numpy(free_np & (u >= keep_fraction))
        if bool(to_target.any()):
            xi = SamplingMask(omega.mask & ~to_target)
            return SSDUSplit(xi, SamplingMask(to_target))
    raise ValueError(f"target set empty after {max_attempts} draws (keep_fraction={keep_fraction})")


def mixed_l1l2_loss(estimate: Tensor, target: Tensor) -> Tensor:
    """``||t - e||_2 / ||t||_2 + ||t - e||_1 / ||t||_1`` over complex entries."""
    d = target - estimate
    l2 = torch.linalg.vector_norm(d) / torch.linalg.vector_norm(target)
    l1 = d.abs().sum() / target.abs().sum()
    return l2 + l1


def ssdu_step_loss(sample: TrainSample, params, split: SSDUSplit) -> Tensor:
    """Self-supervised loss: run on the input set, score in k-space on the held-out set."""
    E = sample.encoder
    y = sample.observation.data
    E_xi = E.with_mask(split.xi)
    E_lam = E.with_mask(split.lambda_set)
    y_xi = y * split.xi.mask.to(y.dtype)
    y_lam = y * split.lambda_set.mask.to(y.dtype)
    sigma_hat = estimate_noise(y_xi, split.xi)
    x_hat = forward(params, y_xi, E_xi, sigma_hat)
    return mixed_l1l2_loss(E_lam.forward(x_hat), y_lam)


def supervised_step_loss(sample: TrainSample, params) -> Tensor:
    """Image-domain loss against the ground truth on the full observation."""
    if sample.ground_truth is None:
        raise ValueError("supervised training needs ground-truth images")
    sigma_hat = estimate_noise(sample.observation)
    x_hat = forward(params, sample.observation.data, sample.encoder, sigma_hat)
    return mixed_l1l2_loss(x_hat, sample.ground_truth)


def cosine_lr(step: int, total: int, lr_start: float = 5e-4, lr_end: float = 2e-6) -> float:
    if total <= 0:
        return lr_start
    t = min(max(step, 0), total) / total
    return lr_end + 0.5 * (lr_start - lr_end) * (1 + math.cos(math.pi * t))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _real_view(t: Tensor) -> Tensor:
    return torch.view_as_real(t) if t.is_complex() else t


def adam_update(params: dict[str, Tensor], grads: dict[str, Tensor], state: AdamState, lr: float):
    """One Adam step, in place. Complex tensors are updated as (re, im) pairs.

    Returns ``(params, state)``.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    with torch.no_grad():
        for name, p in params.items():
            g = _real_view(grads[name])
            if name not in state.m:
                state.m[name] = torch.zeros_like(g)
                state.v[name] = torch.zeros_like(g)
            m, v = state.m[name], state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            step = lr * (m / c1) / ((v / c2).sqrt() + state.eps)
            _real_view(p).sub_(step)
    return params, state


def project_params(params):
    """Clamp step sizes and thresholds at zero (in place); other tensors untouched."""
    with torch.no_grad():
        for name in params.NONNEG:
            getattr(params, name).clamp_(min=0)
    return params


@dataclass
class TrainConfig:
    total_steps: int = 20000
    lr_start: float = 5e-4
    lr_end: float = 2e-6
    batch_size: int = 1
    ssdu_keep_fraction: float = 0.8
    ssdu_center_size: int = 10
    loss_mode: str = "ssdu"
    seed: int = 0
    log_every: int = 100
    val_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if not 0 < self.ssdu_keep_fraction < 1:
            raise ValueError("ssdu_keep_fraction must lie in (0, 1)")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")
        if self.batch_size != 1:
            raise ValueError("only batch_size = 1 is supported")
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")


@dataclass
class TrainResult:
    params: object
    adam: AdamState
    step: int
    log: list[tuple] = field(default_factory=list)


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def _step_loss(sample, params, cfg: TrainConfig, rng):
    if cfg.loss_mode == "ssdu":
        split = ssdu_split(sample.observation.mask, cfg.ssdu_keep_fraction, cfg.ssdu_center_size, rng)
        return ssdu_step_loss(sample, params, split)
    return supervised_step_loss(sample, params)


def reconstruct(params, sample: TrainSample, sigma_hat: float | None = None) -> Tensor:
    """Inference on the full observation (no gradient)."""
    if sigma_hat is None:
        sigma_hat = estimate_noise(sample.observation)
    with torch.no_grad():
        return forward(params, sample.observation.data, sample.encoder, sigma_hat)


def validation_psnr(params, samples) -> float:
    vals = [psnr(reconstruct(params, s), s.ground_truth) for s in samples if s.ground_truth is not None]
    return float(np.mean(vals)) if vals else float("nan")


def train(
    dataset: list[TrainSample],
    params,
    cfg: TrainConfig,
    adam: AdamState | None = None,
    start_step: int = 0,
    val_set: list[TrainSample] | None = None,
    on_log: Callable[[tuple], None] | None = None,
    on_checkpoint: Callable[[TrainResult], None] | None = None,
) -> TrainResult:
    """Train ``params`` (updated in place) for ``cfg.total_steps`` steps.

    Each step draws one sample (and, for SSDU, a fresh split), backpropagates
    the loss, takes an Adam step at the cosine-annealed rate and projects the
    nonnegative parameter groups. Log records are ``(step, lr, loss, val_psnr)``
    with ``val_psnr`` ``None`` when not evaluated.
    """
    if not dataset:
        raise ValueError("empty dataset")
    adam = adam if adam is not None else AdamState()
    kind_cls = type(params)
    stride = params.stride
    tensors = params.tensors()
    result = TrainResult(params, adam, start_step)

    def loss_fn(rng, sample):
        def f(ts):
            return _step_loss(sample, kind_cls(stride=stride, **ts), cfg, rng)
        return f

    for step in range(start_step, cfg.total_steps):
        rng = step_rng(cfg.seed, step)
        sample = dataset[int(rng.integers(len(dataset)))]
        lr = cosine_lr(step, cfg.total_steps, cfg.lr_start, cfg.lr_end)
        try:
            loss, grads = record_and_backprop(loss_fn(rng, sample), tensors)
        except RuntimeError as exc:
            raise TrainingError(str(exc), step) from exc
        if not math.isfinite(loss):
            raise TrainingError("non-finite loss", step)
        adam_update(tensors, grads, adam, lr)
        project_params(params)
        result.step = step + 1
        val = None
        if val_set and cfg.val_every and (step + 1) % cfg.val_every == 0:
            val = validation_psnr(params, val_set)
        if val is not None or (cfg.log_every and (step % cfg.log_every == 0 or step + 1 == cfg.total_steps)):
            rec = (step, lr, loss, val)
            result.log.append(rec)
            if on_log:
                on_log(rec)
        if on_checkpoint and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(result)
    return result


def new_params(kind: str, K: int, M: int, p: int, s: int, image_shape, seed: int, dtype=torch.complex128):
    """Deterministic initialization keyed on the training seed."""
    return init_params(kind, K, M, p, s, image_shape, np.random.default_rng([seed, 2**31 - 1]), dtype)
