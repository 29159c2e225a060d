import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specbench.exceptions import DegenerateApertureError, GridMismatchError, ValidationError
from specbench.filters import SpectralFilterBank
from specbench.hsi import DEFAULT_GRID, HsiCube, IlluminantAndResponse, Spectrum, WavelengthGrid
from specbench.optics import (
    CodedApertureModel,
    NoiseModel,
    acquire_measurements,
    apply_coded_blur,
    build_aperture_model,
    capture_filtered_image,
    convolve_spectral,
    default_mask,
    identity_aperture,
    measurement_plan,
    rainbow_plane_spectrum,
)


def unit_grid(b):
    # delta = 1 nm so Riemann weights are one
    return WavelengthGrid(600, 600 + b - 1, b)


def custom_model(grid, kernel, psfs):
    return CodedApertureModel(np.ones((1, 1), np.uint8), grid, 1.0, 100.0, 300.0, 1.0,
                              np.asarray(kernel, float), np.asarray(psfs, float))


@pytest.fixture(scope="module")
def default_ap():
    return build_aperture_model()


class TestApertureModel:
    def test_delta_aperture(self):
        ap = identity_aperture(DEFAULT_GRID)
        np.testing.assert_array_equal(ap.spectral_kernel, [1.0])
        assert ap.psfs.shape == (100, 1, 1)
        assert np.all(ap.psfs == 1.0)
        assert ap.is_identity

    def test_open_aperture_wide_spectral_blur(self):
        ap = build_aperture_model(np.ones((32, 32), np.uint8))
        assert ap.spectral_kernel.size >= 32
        np.testing.assert_allclose(ap.spectral_kernel[ap.spectral_kernel > 0], 1 / 32)
        s = ap.psfs.shape[1]
        centre = ap.psfs[:, s // 2, s // 2]
        assert np.all(centre > 0.5)
        peaks = ap.psfs.reshape(ap.psfs.shape[0], -1).argmax(axis=1)
        assert np.all(peaks == (s // 2) * s + s // 2)

    def test_psf_matches_dft_oracle(self, rng):
        mask = rng.integers(0, 2, (32, 32))
        ap = build_aperture_model(mask, oversample=1)
        F = np.abs(np.fft.fftshift(np.fft.fft2(mask))) ** 2
        F /= F.sum()
        psf = ap.psfs[-1]
        assert np.max(np.abs(psf[:32, :32] - F)) < 1e-9
        assert psf[32].sum() == 0 and psf[:, 32].sum() == 0

    def test_normalisation_and_binary_mask(self, default_ap):
        assert abs(default_ap.spectral_kernel.sum() - 1) < 1e-9
        assert np.all(np.abs(default_ap.psfs.sum(axis=(1, 2)) - 1) < 1e-9)
        assert set(np.unique(default_ap.mask)) <= {0, 1}
        assert default_ap.spectral_kernel.size == 32
        assert default_ap.invertibility_margin > 0

    def test_default_mask_is_separable_and_reproducible(self):
        m = default_mask()
        assert np.linalg.matrix_rank(m.astype(float)) == 1
        np.testing.assert_array_equal(m, default_mask())

    def test_psf_radius_grows_with_wavelength(self, default_ap):
        r = [CodedApertureModel.second_moment_radius(p) for p in default_ap.psfs]
        assert np.all(np.diff(r) >= 0)
        assert r[-1] > r[0]

    @given(st.integers(0, 2**32 - 1), st.integers(2, 12))
    def test_psf_radius_monotone_random_masks(self, seed, n):
        mask = np.random.default_rng(seed).integers(0, 2, (n, n))
        mask[0, 0] = 1
        ap = build_aperture_model(mask, grid=WavelengthGrid(600, 900, 12))
        r = [CodedApertureModel.second_moment_radius(p) for p in ap.psfs]
        assert np.all(np.diff(r) >= -1e-12)
        assert abs(ap.spectral_kernel.sum() - 1) < 1e-9

    def test_closed_mask(self):
        with pytest.raises(DegenerateApertureError):
            build_aperture_model(np.zeros((4, 4)))

    def test_non_binary_mask(self):
        with pytest.raises(ValidationError):
            build_aperture_model(np.full((2, 2), 0.5))


class TestBlur:
    def test_delta_aperture_identity(self, rng):
        cube = HsiCube(DEFAULT_GRID, rng.uniform(0, 1, (4, 5, 100)))
        out = apply_coded_blur(cube, identity_aperture(DEFAULT_GRID))
        np.testing.assert_array_equal(out.data, cube.data)

    def test_hand_convolution(self):
        g = unit_grid(4)
        ap = custom_model(g, [0.5, 0.5], np.ones((4, 1, 1)))
        out = apply_coded_blur(HsiCube(g, np.array([[[1.0, 0, 0, 0]]])), ap)
        np.testing.assert_allclose(out.data[0, 0], [0.5, 0.5, 0, 0])

    def test_nested_loop_oracle(self, rng):
        g = unit_grid(16)
        data = rng.uniform(0, 1, (8, 8, 16))
        k = rng.uniform(0, 1, 5)
        k /= k.sum()
        psfs = rng.uniform(0, 1, (16, 3, 3))
        psfs /= psfs.sum(axis=(1, 2), keepdims=True)
        out = apply_coded_blur(HsiCube(g, data), custom_model(g, k, psfs)).data

        spatial = np.zeros_like(data)
        for b in range(16):
            for r in range(8):
                for c in range(8):
                    acc = 0.0
                    for i in range(3):
                        for j in range(3):
                            rr, cc = r - (i - 1), c - (j - 1)
                            if 0 <= rr < 8 and 0 <= cc < 8:
                                acc += psfs[b, i, j] * data[rr, cc, b]
                    spatial[r, c, b] = acc
        expected = np.zeros_like(data)
        centre = (k.size - 1) // 2
        for b in range(16):
            for t in range(k.size):
                src = b - (t - centre)
                if 0 <= src < 16:
                    expected[:, :, b] += k[t] * spatial[:, :, src]
        assert np.max(np.abs(out - expected)) < 1e-9
        assert np.all(out >= 0)

    def test_grid_mismatch(self, rng):
        with pytest.raises(GridMismatchError):
            apply_coded_blur(HsiCube(unit_grid(4), np.ones((1, 1, 4))), identity_aperture(DEFAULT_GRID))

    def test_convolve_spectral_even_kernel_offsets(self):
        out = convolve_spectral(np.array([0, 1.0, 0, 0, 0]), [0.25, 0.5, 0.25, 0.0])
        np.testing.assert_allclose(out, [0.25, 0.5, 0.25, 0, 0])


class TestCapture:
    def test_plain_sum(self):
        g = unit_grid(3)
        img = capture_filtered_image(HsiCube(g, np.array([[[1.0, 2, 4]]])), np.ones(3))
        assert img[0, 0] == 7.0

    def test_masked_sum(self):
        g = unit_grid(4)
        img = capture_filtered_image(HsiCube(g, np.array([[[1.0, 2, 3, 4]]])), [0, 1, 0, 1])
        assert img[0, 0] == 6.0

    def test_triple_loop_oracle(self, rng):
        g = DEFAULT_GRID
        data = rng.uniform(0, 1, (5, 6, 100))
        s = rng.uniform(0, 1, 100)
        c = rng.uniform(0.1, 1, 100)
        ir = IlluminantAndResponse(Spectrum.constant(g), Spectrum(g, c))
        img = capture_filtered_image(HsiCube(g, data), Spectrum(g, s), ir)
        for r in range(5):
            for col in range(6):
                ref = sum(data[r, col, b] * s[b] * c[b] * g.delta for b in range(100))
                assert abs(img[r, col] - ref) < 1e-9

    def test_profile_out_of_range(self):
        g = unit_grid(2)
        with pytest.raises(ValidationError):
            capture_filtered_image(HsiCube(g, np.ones((1, 1, 2))), [1.5, 0])
        with pytest.raises(ValidationError):
            capture_filtered_image(HsiCube(g, np.ones((1, 1, 2))), [-0.1, 0])

    @given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
    def test_linearity(self, seed, a, b):
        r = np.random.default_rng(seed)
        g = unit_grid(10)
        cube = HsiCube(g, r.uniform(0, 1, (3, 3, 10)))
        s1 = r.uniform(0, 1, 10)
        s2 = r.uniform(0, 1, 10)
        total = a + b
        if total > 1:
            a, b = a / total, b / total
        lhs = capture_filtered_image(cube, np.clip(a * s1 + b * s2, 0, 1))
        rhs = a * capture_filtered_image(cube, s1) + b * capture_filtered_image(cube, s2)
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    @given(st.integers(0, 2**32 - 1))
    def test_broader_filter_never_darker(self, seed):
        r = np.random.default_rng(seed)
        g = unit_grid(12)
        cube = HsiCube(g, r.uniform(0, 1, (3, 4, 12)))
        s1 = r.uniform(0, 1, 12)
        s2 = np.minimum(1.0, s1 + r.uniform(0, 0.5, 12))
        assert np.all(capture_filtered_image(cube, s2) >= capture_filtered_image(cube, s1))

    def test_noise_determinism(self, rng):
        cube = HsiCube(unit_grid(4), rng.uniform(0, 1, (6, 6, 4)))
        a = capture_filtered_image(cube, np.ones(4), noise=NoiseModel(100, 1.0, seed=5))
        b = capture_filtered_image(cube, np.ones(4), noise=NoiseModel(100, 1.0, seed=5))
        c = capture_filtered_image(cube, np.ones(4), noise=NoiseModel(100, 1.0, seed=6))
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, c)

    @pytest.mark.parametrize("seed", [1, 2])
    def test_noise_variance_matches_model(self, seed):
        g = unit_grid(2)
        cube = HsiCube(g, np.full((100, 120, 2), 0.5))
        noise = NoiseModel(400.0, read_sigma=3.0, seed=seed)
        img = capture_filtered_image(cube, [1.0, 0.0], noise=noise)
        scale = 400.0 / 1.0  # sum-image peak is 1.0
        clean = 0.5
        predicted = clean / scale + (3.0 / scale) ** 2
        assert img.size >= 1e4
        assert abs(img.var() / predicted - 1) < 0.10
        assert abs(img.mean() - clean) < 5 * np.sqrt(predicted / img.size)

    def test_noise_model_validation(self):
        with pytest.raises(ValidationError):
            NoiseModel(0)
        with pytest.raises(ValidationError):
            NoiseModel(10, read_sigma=-1)


class TestRainbowPlane:
    def test_delta_aperture(self):
        g = unit_grid(3)
        out = rainbow_plane_spectrum(HsiCube(g, np.array([[[1.0, 2, 3]]])), identity_aperture(g))
        np.testing.assert_array_equal(out.values, [1, 2, 3])

    def test_spatial_sum(self):
        g = unit_grid(3)
        out = rainbow_plane_spectrum(HsiCube(g, np.array([[[1.0, 0, 0], [0, 0, 1]]])), identity_aperture(g))
        np.testing.assert_array_equal(out.values, [1, 0, 1])

    def test_monochromatic_scene_reproduces_code(self):
        g = unit_grid(20)
        code = np.array([1, 0, 1, 1, 0], float) / 3
        data = np.zeros((4, 4, 20))
        data[..., 10] = 1.0
        out = rainbow_plane_spectrum(HsiCube(g, data), custom_model(g, code, np.ones((20, 1, 1)))).values
        c = (code.size - 1) // 2
        np.testing.assert_allclose(out[10 - c : 10 - c + code.size], 16 * code, atol=1e-12)
        assert out.sum() == pytest.approx(16.0)


class TestAcquisition:
    @pytest.mark.parametrize("q,expected", [(3, 7), (5, 11), (10, 21)])
    def test_signed_counts(self, q, expected, rng):
        bank = SpectralFilterBank(rng.normal(size=(q, 8)) + np.tile([3.0, -3.0], 4))
        cube = HsiCube(unit_grid(8), rng.uniform(0, 1, (2, 2, 8)))
        ms = acquire_measurements(cube, None, None, bank, dc_rows=0)
        assert ms.images_captured == expected == 2 * q + 1
        assert len(measurement_plan(bank, 16)) == expected

    def test_empty_bank(self, rng):
        cube = HsiCube(unit_grid(8), rng.uniform(0, 1, (2, 2, 8)))
        ms = acquire_measurements(cube, None, None, None)
        assert ms.images_captured == 1 and ms.filter_images.shape == (0, 2, 2)

    def test_nonnegative_bank_counts(self, rng):
        bank = SpectralFilterBank(rng.uniform(0, 1, (4, 8)))
        assert len(measurement_plan(bank, 0)) == 5
        assert len(measurement_plan(bank, 16)) == 6  # plus one shared DC-only image

    def test_identity_optics_oracle(self, rng):
        g = DEFAULT_GRID
        cube = HsiCube(g, rng.uniform(0, 1, (6, 7, 100)))
        bank = SpectralFilterBank(rng.normal(size=(4, 100)))
        ms = acquire_measurements(cube, identity_aperture(g), None, bank, slm_rows=None)
        direct = np.einsum("rcb,kb->krc", cube.data, bank.filters) * g.delta
        assert np.max(np.abs(ms.filter_images - direct)) < 1e-9
        np.testing.assert_allclose(ms.sum_image, cube.data.sum(axis=2) * g.delta, atol=1e-9)

    @pytest.mark.parametrize("nonneg", [False, True])
    def test_quantised_reconstruction_bound(self, rng, nonneg):
        g = DEFAULT_GRID
        cube = HsiCube(g, rng.uniform(0, 1, (5, 5, 100)))
        d = rng.normal(size=(3, 100))
        if nonneg:
            d = np.abs(d)
        bank = SpectralFilterBank(d)
        rows, dc = 1080, 16
        ms = acquire_measurements(cube, None, None, bank, slm_rows=rows, dc_rows=dc)
        direct = np.einsum("rcb,kb->krc", cube.data, d) * g.delta
        for k in range(3):
            bound = np.max(np.abs(d[k])) * 0.5 / (rows - dc) * ms.sum_image
            assert np.all(np.abs(ms.filter_images[k] - direct[k]) <= bound + 1e-12)

    def test_noisy_acquisition_is_seeded(self, rng):
        cube = HsiCube(unit_grid(8), rng.uniform(0.5, 1, (4, 4, 8)))
        bank = SpectralFilterBank(rng.normal(size=(2, 8)))
        a = acquire_measurements(cube, None, None, bank, NoiseModel(1e3, 0.5, 9))
        b = acquire_measurements(cube, None, None, bank, NoiseModel(1e3, 0.5, 9))
        assert a.filter_images.tobytes() == b.filter_images.tobytes()
        assert a.sum_image.tobytes() == b.sum_image.tobytes()

    def test_band_mismatch(self, rng):
        cube = HsiCube(unit_grid(8), rng.uniform(0, 1, (2, 2, 8)))
        with pytest.raises(ValidationError):
            acquire_measurements(cube, None, None, SpectralFilterBank(np.ones((1, 5))))
