import numpy as np
import pytest
import torch
from conftest import crandn, vdot
from hypothesis import given, settings
from hypothesis import strategies as st

from lpdsnet.mri import (
    CoilSensitivities,
    EncodingOperator,
    KSpaceObservation,
    SamplingMask,
    add_noise,
    adjoint,
    encode,
    estimate_noise,
    generate_mask,
    operator_norm,
)
from lpdsnet.simdata import make_phantom, make_sensitivities
from lpdsnet.spectral import dft2_centered, idft2_centered


def full_mask(h, w):
    return SamplingMask(torch.ones(h, w, dtype=torch.bool))


def unit_sens(h, w, c=1):
    return CoilSensitivities(torch.ones(c, h, w, dtype=torch.complex128))


def test_encode_single_coil_full_mask_is_dft(gen):
    x = crandn(gen, 8, 8)
    E = EncodingOperator(full_mask(8, 8), unit_sens(8, 8))
    assert torch.allclose(encode(x, E).data[0], dft2_centered(x), atol=1e-14)


def test_adjoint_single_coil_full_mask_is_idft(gen):
    y = crandn(gen, 1, 8, 8)
    E = EncodingOperator(full_mask(8, 8), unit_sens(8, 8))
    assert torch.allclose(adjoint(y, E), idft2_centered(y[0]), atol=1e-14)


def test_adjoint_of_zero_is_zero(rng):
    E = EncodingOperator(generate_mask(16, 16, 4, 0.125, rng), make_sensitivities(16, 3, rng))
    assert adjoint(torch.zeros(3, 16, 16, dtype=torch.complex128), E).abs().max() == 0


@settings(max_examples=40, deadline=None)
@given(h=st.integers(2, 20), w=st.integers(2, 20), c=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_adjoint_identity_property(h, w, c, seed):
    g = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    m = torch.from_numpy(rng.random((h, w)) < 0.5)
    m[0, 0] = True
    E = EncodingOperator(SamplingMask(m), CoilSensitivities(crandn(g, c, h, w)))
    x, y = crandn(g, h, w), crandn(g, c, h, w)
    a, b = vdot(E.forward(x), y), vdot(x, E.adjoint(y))
    assert abs(a - b) <= 1e-12 * abs(a)


def test_normalized_sensitivities_full_mask_identity(gen, rng):
    E = EncodingOperator(full_mask(16, 16), make_sensitivities(16, 4, rng))
    x = crandn(gen, 16, 16)
    assert (adjoint(encode(x, E), E) - x).abs().max() < 1e-12


def test_operator_norm_bounded(rng):
    E = EncodingOperator(generate_mask(16, 16, 2, 0.25, rng), make_sensitivities(16, 3, rng))
    assert operator_norm(E.normal, (16, 16), iters=200) <= 1 + 1e-8


def test_observation_sampled_rows(rng):
    E = EncodingOperator(generate_mask(16, 16, 4, 0.125, rng), make_sensitivities(16, 2, rng))
    y = encode(make_phantom(16, rng), E)
    assert y.sampled_rows().shape == (2, 4, 16)
    unsampled = ~E.mask.mask
    assert y.data[:, unsampled].abs().max() == 0


class TestGenerateMask:
    def test_reference_configuration(self, rng):
        m = generate_mask(100, 100, 4, 0.08, rng)
        assert len(m.kept_rows) == 25
        a, b = m.center_rows
        assert b - a == 8
        assert set(range(a, b)) <= set(m.kept_rows)
        assert a <= 50 < b

    def test_height_64_rounding(self, rng):
        m = generate_mask(64, 64, 4, 0.08, rng)
        assert len(m.kept_rows) == 16
        assert m.center_rows[1] - m.center_rows[0] == 5

    def test_no_acceleration_keeps_everything(self):
        for seed in range(3):
            m = generate_mask(20, 8, 1, 0.5, np.random.default_rng(seed))
            assert m.kept_rows == list(range(20))

    def test_deterministic(self):
        a = generate_mask(64, 64, 4, 0.08, np.random.default_rng(7))
        b = generate_mask(64, 64, 4, 0.08, np.random.default_rng(7))
        assert torch.equal(a.mask, b.mask)

    def test_whole_rows(self, rng):
        m = generate_mask(32, 24, 4, 0.08, rng)
        rows = m.mask.any(dim=1)
        assert torch.equal(m.mask, rows[:, None].expand(32, 24))

    @pytest.mark.parametrize("accel,frac", [(0.5, 0.1), (4, 0.3), (4, 0.0)])
    def test_infeasible(self, rng, accel, frac):
        with pytest.raises(ValueError):
            generate_mask(64, 64, accel, frac, rng)


class TestNoise:
    def _zero_obs(self, h=64, w=64, rows=25, c=1, seed=0):
        rng = np.random.default_rng(seed)
        m = SamplingMask.from_rows(h, w, rng.choice(h, rows, replace=False))
        return KSpaceObservation(torch.zeros(c, h, w, dtype=torch.complex128), m)

    def test_sigma_zero_identity(self, rng):
        y = self._zero_obs()
        assert torch.equal(add_noise(y, 0.0, rng).data, y.data)

    def test_variance_monte_carlo(self):
        # 1000 x 1000 fully sampled grid = 1e6 entries
        m = SamplingMask(torch.ones(1000, 1000, dtype=torch.bool))
        y = KSpaceObservation(torch.zeros(1, 1000, 1000, dtype=torch.complex128), m)
        n = add_noise(y, 0.05, np.random.default_rng(3))
        assert n.sigma == 0.05
        assert n.data.real.var().item() == pytest.approx(0.05**2, rel=0.01)
        assert n.data.imag.var().item() == pytest.approx(0.05**2, rel=0.01)

    def test_reproducible(self):
        y = self._zero_obs()
        a = add_noise(y, 0.1, np.random.default_rng(5))
        b = add_noise(y, 0.1, np.random.default_rng(5))
        assert torch.equal(a.data, b.data)

    def test_only_sampled_entries(self, rng):
        y = add_noise(self._zero_obs(), 0.1, rng)
        assert y.data[:, ~y.mask.mask].abs().max() == 0

    def test_estimate_pure_noise(self):
        y = add_noise(self._zero_obs(), 0.05, np.random.default_rng(11))
        assert 0.045 <= estimate_noise(y) <= 0.055

    @pytest.mark.parametrize("sigma", [0.01, 0.05, 0.1])
    def test_estimate_unbiased_within_10pct(self, sigma):
        ests = [estimate_noise(add_noise(self._zero_obs(c=4, seed=s), sigma, np.random.default_rng(s)))
                for s in range(10)]
        assert np.mean(ests) == pytest.approx(sigma, rel=0.1)

    def test_estimate_on_noiseless_phantom(self, rng):
        E = EncodingOperator(generate_mask(64, 64, 4, 0.08, rng), make_sensitivities(64, 4, rng))
        y = encode(make_phantom(64, rng), E)
        assert estimate_noise(y) < 0.005

    @pytest.mark.parametrize("alpha", [2.0, 0.5, 3.7])
    def test_positive_homogeneity(self, alpha):
        y = add_noise(self._zero_obs(c=2), 0.05, np.random.default_rng(2))
        scaled = KSpaceObservation(alpha * y.data, y.mask, alpha * y.sigma)
        assert estimate_noise(scaled) == pytest.approx(alpha * estimate_noise(y), rel=1e-14)
        if alpha in (2.0, 0.5):
            assert estimate_noise(scaled) == alpha * estimate_noise(y)


def test_shape_mismatch_rejected(rng):
    E = EncodingOperator(generate_mask(16, 16, 4, 0.125, rng), make_sensitivities(16, 2, rng))
    with pytest.raises(ValueError):
        E.forward(torch.zeros(8, 8, dtype=torch.complex128))
    with pytest.raises(ValueError):
        EncodingOperator(generate_mask(8, 8, 4, 0.125, rng), make_sensitivities(16, 2, rng))
