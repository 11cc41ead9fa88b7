import numpy as np
import pytest
import torch

from lpdsnet.metrics import PSNR_CAP, gaussian_window, psnr, psnr_flagged, ssim
from lpdsnet.mri import EncodingOperator, generate_mask, operator_norm
from lpdsnet.simdata import make_dataset, make_phantom, make_sample, make_sensitivities


def test_phantom_basic_properties(rng):
    x = make_phantom(64, rng)
    mag = x.abs()
    assert abs(float(mag.max()) - 1) < 1e-12
    assert 0 < float(mag.mean()) < 1
    assert float(mag.var()) > 0
    assert x.dtype == torch.complex128 and float(x.imag.abs().max()) > 0


def test_phantom_seed_reproducible():
    a = make_phantom(32, np.random.default_rng(5))
    b = make_phantom(32, np.random.default_rng(5))
    assert torch.equal(a, b)
    assert not torch.equal(a, make_phantom(32, np.random.default_rng(6)))


@pytest.mark.parametrize("coils", [1, 2, 4, 8])
def test_sensitivities_normalized(rng, coils):
    s = make_sensitivities(32, coils, rng)
    ssq = (s.maps.abs() ** 2).sum(0)
    assert float((ssq - 1).abs().max()) < 1e-12


def test_single_coil_is_pure_phase(rng):
    s = make_sensitivities(32, 1, rng)
    assert float((s.maps.abs() - 1).abs().max()) < 1e-12


def test_encoding_norm_at_most_one(rng):
    mask = generate_mask(32, 32, 4, 0.08, rng)
    E = EncodingOperator(mask, make_sensitivities(32, 4, rng))
    assert operator_norm(E.normal, (32, 32), iters=300) <= 1 + 1e-8


def test_dataset_sigma_range_and_masks():
    data = make_dataset(6, 64, 2, 4, 0.08, (0.04, 0.06), np.random.default_rng(0))
    for s in data:
        assert 0.04 <= s.sigma <= 0.06
        assert s.observation.sigma == s.sigma
        assert len(s.observation.mask.kept_rows) == 16
        c0, c1 = s.observation.mask.center_rows
        assert c1 - c0 == 5
        assert s.ground_truth.shape == (64, 64) and s.observation.data.shape == (2, 64, 64)


def test_dataset_deterministic():
    a = make_dataset(2, 32, 2, 4, 0.08, (0.04, 0.06), np.random.default_rng(9))
    b = make_dataset(2, 32, 2, 4, 0.08, (0.04, 0.06), np.random.default_rng(9))
    for x, y in zip(a, b):
        assert torch.equal(x.observation.data, y.observation.data)
        assert torch.equal(x.encoder.sens.maps, y.encoder.sens.maps)
        assert x.sigma == y.sigma


def test_sample_noise_is_stored_and_rescalable(rng):
    s = make_sample(32, 2, 4, 0.08, 0.05, rng)
    clean = s.encoder.forward(s.ground_truth)
    assert torch.allclose(s.observation.data, clean + 0.05 * s.noise, atol=1e-15)
    t = s.rescaled(0.1)
    assert torch.allclose(t.observation.data, clean + 0.1 * s.noise, atol=1e-15)
    assert t.sigma == 0.1 and t.observation.sigma == 0.1
    assert not s.noise[:, ~s.observation.mask.mask].any()


def test_self_supervised_sample_has_no_ground_truth(rng):
    s = make_sample(16, 2, 2, 0.25, 0.05, rng, keep_ground_truth=False)
    assert s.ground_truth is None


def test_psnr_closed_form():
    ref = np.zeros((10, 10))
    ref[0, 0] = 1.0
    est = ref + np.sqrt(1e-3) * np.where(np.indices((10, 10)).sum(0) % 2, 1, -1)
    assert psnr(est, ref) == pytest.approx(30.0, abs=1e-10)


def test_psnr_identical_is_capped_and_flagged(rng):
    x = make_phantom(16, rng)
    assert psnr_flagged(x, x) == (PSNR_CAP, True)
    assert psnr_flagged(x * 0.9, x)[1] is False


def test_psnr_decreases_with_noise(rng):
    ref = make_phantom(32, rng).abs().numpy()
    noise = rng.standard_normal(ref.shape)
    vals = [psnr(ref + s * noise, ref) for s in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def loop_ssim(x, y, size=11, sigma=1.5, K1=0.01, K2=0.03):
    x, y = np.abs(x), np.abs(y)
    L = y.max()
    C1, C2 = (K1 * L) ** 2, (K2 * L) ** 2
    ax = np.arange(size) - (size - 1) / 2
    w = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma**2))
    w /= w.sum()
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            px, py = x[i : i + size, j : j + size], y[i : i + size, j : j + size]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append((2 * mx * my + C1) * (2 * cxy + C2) / ((mx**2 + my**2 + C1) * (vx + vy + C2)))
    return float(np.mean(vals))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_matches_loop_oracle(seed):
    r = np.random.default_rng(seed)
    y = r.random((32, 32)) + 1j * r.random((32, 32))
    x = y + 0.3 * (r.standard_normal((32, 32)) + 1j * r.standard_normal((32, 32)))
    assert abs(ssim(x, y) - loop_ssim(x, y)) < 1e-10


def test_ssim_identity_and_luminance(rng):
    x = make_phantom(32, rng).abs().numpy()
    assert abs(ssim(x, x) - 1) < 1e-12
    assert ssim(x + 0.5, x) < 1


def test_ssim_constant_images_closed_form():
    c1, c2 = 0.3, 0.8
    C1 = (0.01 * c2) ** 2
    expected = (2 * c1 * c2 + C1) / (c1**2 + c2**2 + C1)
    assert ssim(np.full((16, 16), c1), np.full((16, 16), c2)) == pytest.approx(expected, rel=1e-12)


def test_gaussian_window_normalized():
    w = gaussian_window()
    assert w.shape == (11, 11) and abs(w.sum() - 1) < 1e-15
    assert np.allclose(w, w.T)


def test_ssim_shape_mismatch():
    with pytest.raises(ValueError):
        ssim(np.ones((12, 12)), np.ones((13, 13)))
