import numpy as np
import pytest
import torch
from conftest import crandn

from lpdsnet.autograd import (
    NonFiniteGradient,
    central_differences,
    record_and_backprop,
    relative_error,
)
from lpdsnet.conv import analyze, synthesize
from lpdsnet.mri import CoilSensitivities, EncodingOperator, SamplingMask
from lpdsnet.nets import LPDSNetParams, forward, lpdsnet_forward
from lpdsnet.prox import clip, inject_clip_backward_fault, soft_threshold
from lpdsnet.selfcheck import gradient_check, tiny_problem
from lpdsnet.spectral import dft2_centered, idft2_centered
from lpdsnet.training import mixed_l1l2_loss


def test_quadratic_scalar_example(gen):
    x, t = crandn(gen, 5, 5), crandn(gen, 5, 5)
    alpha = torch.tensor(0.7, dtype=torch.float64)
    loss, g = record_and_backprop(lambda p: torch.linalg.vector_norm(p["a"] * x - t) ** 2, {"a": alpha})
    expected = 2 * torch.vdot(x.flatten(), (alpha * x - t).flatten()).real
    assert float(g["a"]) == pytest.approx(float(expected), rel=1e-13)
    assert loss == pytest.approx(float(torch.linalg.vector_norm(alpha * x - t) ** 2), rel=1e-14)


def test_complex_gradient_convention(gen):
    # loss = |c - w|^2 has d/dRe + i d/dIm = 2 (c - w)
    c, w = crandn(gen, 3), crandn(gen, 3)
    _, g = record_and_backprop(lambda p: (p["c"] - w).abs().pow(2).sum(), {"c": c})
    assert torch.allclose(g["c"], 2 * (c - w), rtol=1e-14, atol=0)


def _mask_op(gen):
    m = torch.zeros(6, 6, dtype=torch.bool)
    m[::2] = True
    m[3] = True
    return EncodingOperator(SamplingMask(m), CoilSensitivities(crandn(gen, 2, 6, 6)))


def _ops(gen):
    E = _mask_op(gen)
    w_img, w_k = crandn(gen, 6, 6), crandn(gen, 2, 6, 6)
    kern = crandn(gen, 3, 3, 3)
    w_sub = crandn(gen, 3, 3, 3)
    lam = torch.tensor([0.3, 0.6, 0.9], dtype=torch.float64)

    def inner(a, b):
        return torch.vdot(a.flatten(), b.flatten()).real

    return {
        "dft2": ({"x": crandn(gen, 6, 6)}, lambda p: inner(w_img, dft2_centered(p["x"]))),
        "idft2": ({"x": crandn(gen, 6, 6)}, lambda p: inner(w_img, idft2_centered(p["x"]))),
        "encode": ({"x": crandn(gen, 6, 6)}, lambda p: inner(w_k, E.forward(p["x"]))),
        "adjoint": ({"y": crandn(gen, 2, 6, 6)}, lambda p: inner(w_img, E.adjoint(p["y"]))),
        "analyze": ({"x": crandn(gen, 6, 6), "k": kern.clone()},
                    lambda p: inner(w_sub, analyze(p["x"], p["k"], 2))),
        "synthesize": ({"z": crandn(gen, 3, 3, 3), "k": kern.clone()},
                       lambda p: inner(w_img, synthesize(p["z"], p["k"], (6, 6), 2))),
        "clip": ({"z": crandn(gen, 3, 4, 4), "lam": lam.clone()},
                 lambda p: inner(w_sub.repeat(1, 2, 2)[:, :4, :4], clip(p["z"], p["lam"]))),
        "soft_threshold": ({"z": crandn(gen, 3, 4, 4), "tau": lam.clone()},
                           lambda p: inner(w_sub.repeat(1, 2, 2)[:, :4, :4], soft_threshold(p["z"], p["tau"]))),
        "affine": ({"a": crandn(gen, 4), "b": crandn(gen, 4)},
                   lambda p: inner(w_img[0, :4], (2 - 1j) * p["a"] + 0.5 * p["b"] - 3)),
        "scalar_times_field": ({"s": torch.tensor(0.4, dtype=torch.float64), "x": crandn(gen, 6, 6)},
                               lambda p: inner(w_img, p["s"] * p["x"])),
        "mean_subtraction": ({"x": crandn(gen, 6, 6)},
                             lambda p: inner(w_img, p["x"] - p["x"].mean(dim=(-2, -1), keepdim=True))),
        "l1": ({"x": crandn(gen, 6, 6)}, lambda p: p["x"].abs().sum()),
        "l2": ({"x": crandn(gen, 6, 6)}, lambda p: torch.linalg.vector_norm(p["x"])),
        "mixed_loss": ({"x": crandn(gen, 6, 6)}, lambda p: mixed_l1l2_loss(p["x"], w_img)),
    }


@pytest.mark.parametrize("op", list(_ops(torch.Generator().manual_seed(0))))
def test_backward_rule_matches_finite_differences(op):
    params, fn = _ops(torch.Generator().manual_seed(5))[op]
    _, g = record_and_backprop(fn, params)
    fd = central_differences(fn, params, 1e-6)
    for n in params:
        assert relative_error(g[n], fd[n]) < 1e-7, n


def test_l1_subgradient_at_zero_is_zero():
    x = torch.tensor([0j, 1 + 1j, 0j], dtype=torch.complex128)
    _, g = record_and_backprop(lambda p: p["x"].abs().sum(), {"x": x})
    assert g["x"][0] == 0 and g["x"][2] == 0


@pytest.mark.parametrize("kind", ["lpdsnet", "cdlnet"])
@pytest.mark.parametrize("seed", [0, 11])
def test_network_gradients_match_finite_differences(kind, seed):
    worst, errs, _ = gradient_check(kind, seed)
    assert worst < 1e-5, errs


def test_lambda0_gradient_zero_when_nothing_clips():
    sample, params = tiny_problem("lpdsnet", 0)
    params = params.replace_tensors({"lam0": torch.full_like(params.lam0, 1e6)})

    def loss_fn(ts):
        x = lpdsnet_forward(sample.observation, sample.encoder, 0.05, LPDSNetParams(stride=2, **ts))
        return mixed_l1l2_loss(x, sample.ground_truth)

    _, g = record_and_backprop(loss_fn, params.tensors())
    assert torch.count_nonzero(g["lam0"]) == 0
    assert torch.count_nonzero(g["lam1"]) == 0


def test_constant_graph_has_zero_gradient(gen):
    p = {"a": crandn(gen, 3), "b": torch.tensor(1.0, dtype=torch.float64)}
    loss, g = record_and_backprop(lambda q: torch.tensor(2.5, dtype=torch.float64), p)
    assert loss == 2.5
    assert all(torch.count_nonzero(v) == 0 and v.shape == p[k].shape for k, v in g.items())


def test_gradients_are_bit_deterministic():
    sample, params = tiny_problem("lpdsnet", 3)

    def loss_fn(ts):
        return mixed_l1l2_loss(forward(type(params)(stride=2, **ts), sample.observation, sample.encoder, 0.05),
                               sample.ground_truth)

    _, g1 = record_and_backprop(loss_fn, params.tensors())
    _, g2 = record_and_backprop(loss_fn, params.tensors())
    assert all(torch.equal(g1[k], g2[k]) for k in g1)


def test_non_real_or_nonscalar_loss_rejected(gen):
    with pytest.raises(ValueError):
        record_and_backprop(lambda p: p["x"].sum(), {"x": crandn(gen, 3)})
    with pytest.raises(ValueError):
        record_and_backprop(lambda p: p["x"].abs(), {"x": crandn(gen, 3)})


def test_nonfinite_gradient_names_parameter():
    x = torch.tensor([0.0], dtype=torch.float64)
    with pytest.raises(NonFiniteGradient, match="'x'"):
        record_and_backprop(lambda p: p["x"].sqrt().sum(), {"x": x})


def test_injected_backward_fault_is_detected():
    with inject_clip_backward_fault(1e-2):
        worst, _, _ = gradient_check("lpdsnet", 0)
    assert worst > 1e-5


def test_finite_differences_on_polynomial():
    p = {"v": torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64)}
    fd = central_differences(lambda q: (q["v"] ** 3).sum(), p, 1e-5)
    assert np.allclose(fd["v"].numpy(), 3 * p["v"].numpy() ** 2, rtol=1e-9)
