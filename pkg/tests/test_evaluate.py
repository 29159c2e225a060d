import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specbench.evaluate import (
    UNKNOWN_LABEL,
    FeatureImageSet,
    binary_scores,
    classify_pixels,
    confusion_and_accuracy,
    full_scan_then_project,
    normalize_features,
    roc_curve,
    sweep_filter_count,
)
from specbench.exceptions import ValidationError
from specbench.filters import SpectralFilterBank
from specbench.hsi import DEFAULT_GRID, HsiCube, LabelMap, WavelengthGrid
from specbench.learn import (
    FilterMLPClassifier,
    MatchedFilterClassifier,
    OneVsAllSVM,
    extract_filters,
    split_dataset,
    sum_normalize,
)
from specbench.library import sample_class_spectra, surrogate_library, synthetic_scene
from specbench.optics import (
    MeasurementSet,
    NoiseModel,
    acquire_measurements,
    build_aperture_model,
    convolve_spectral,
    identity_aperture,
)


def ms_from(sum_image, filter_images):
    return MeasurementSet(np.asarray(sum_image, float), np.asarray(filter_images, float), 3)


class TestNormalize:
    def test_hand_example(self):
        fs = normalize_features(ms_from([[2.0, 4.0]], [[[1.0, 1.0]]]))
        np.testing.assert_allclose(fs.features, [[[0.5, 0.25]]])
        assert fs.valid.all()

    def test_floor(self):
        fs = normalize_features(ms_from([[1.0, 0.0]], [[[1.0, 1.0]]]))
        assert fs.valid.tolist() == [[True, False]]
        assert np.isnan(fs.features[0, 0, 1])
        fs = normalize_features(ms_from([[1.0, 0.5]], [[[1.0, 1.0]]]), floor=0.6)
        assert fs.valid.tolist() == [[True, False]]

    @given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
    def test_brightness_invariance(self, alpha, seed):
        r = np.random.default_rng(seed)
        s = r.uniform(0.5, 1, (3, 3))
        f = r.normal(size=(2, 3, 3))
        a = normalize_features(ms_from(s, f)).features
        b = normalize_features(ms_from(alpha * s, alpha * f)).features
        np.testing.assert_allclose(a, b, rtol=1e-12)


class TestClassify:
    def test_threshold_mode(self):
        fs = FeatureImageSet(np.array([[[0.1, 0.7]]]), np.ones((1, 2), bool))
        sm = classify_pixels(fs, None, threshold=0.5)
        assert sm.labels.tolist() == [[0, 1]]
        np.testing.assert_allclose(binary_scores(sm), [[-0.8, 0.4]])
        with pytest.raises(ValidationError):
            classify_pixels(fs, None)

    def test_invalid_pixels_unknown(self):
        fs = FeatureImageSet(np.array([[[0.1, np.nan]]]), np.array([[True, False]]))
        sm = classify_pixels(fs, None, threshold=0.0)
        assert sm.labels[0, 1] == UNKNOWN_LABEL and np.all(np.isnan(sm.scores[0, 1]))
        assert sm.known.tolist() == [[True, False]]

    def test_identity_pipeline_matches_digital(self, rng):
        grid = WavelengthGrid(600, 900, 20)
        lib = surrogate_library(grid, 3, seed=1)
        X, y = sample_class_spectra(lib, 60, seed=2)
        Xn = sum_normalize(X)
        svm = OneVsAllSVM(epochs=20).fit(Xn, y)
        cube, labels = synthetic_scene((6, 7), lib, seed=3)
        ms = acquire_measurements(cube, identity_aperture(grid), None, extract_filters(svm), slm_rows=None)
        sm = classify_pixels(normalize_features(ms), svm)
        digital = svm.predict(sum_normalize(cube.pixels())).reshape(6, 7)
        np.testing.assert_array_equal(sm.labels, digital)

    def test_separable_five_class_scene(self):
        grid = WavelengthGrid(600, 900, 30)
        lib = surrogate_library(grid, 5, seed=4)
        X, y = sample_class_spectra(lib, 100, variability=0.0, noise=0.0, seed=5)
        # two of the classes are close after normalisation, so train longer
        svm = OneVsAllSVM(reg=1e-5, epochs=200, learning_rate=5.0).fit(sum_normalize(X), y)
        assert svm.score(sum_normalize(X), y) == 1.0
        cube, labels = synthetic_scene((16, 16), lib, seed=6, variability=0.0, noise=0.0)
        ms = acquire_measurements(cube, None, None, extract_filters(svm), slm_rows=None)
        rep = confusion_and_accuracy(classify_pixels(normalize_features(ms), svm), labels)
        assert rep.accuracy == 1.0

    def test_mlp_and_matched(self, rng):
        grid = WavelengthGrid(600, 900, 12)
        lib = surrogate_library(grid, 2, seed=7)
        X, y = sample_class_spectra(lib, 80, seed=8)
        Xn = sum_normalize(X)
        cube, _ = synthetic_scene((5, 5), lib, seed=9)
        digital_in = sum_normalize(cube.pixels())
        for model in (FilterMLPClassifier(n_filters=2, epochs=5).fit(Xn, y), MatchedFilterClassifier().fit(Xn, y)):
            ms = acquire_measurements(cube, None, None, extract_filters(model), slm_rows=None)
            sm = classify_pixels(normalize_features(ms), model)
            np.testing.assert_array_equal(sm.labels.ravel(), model.predict(digital_in))

    def test_coded_optics_interior_consistency(self):
        # away from the spatial borders of a uniform patch the camera sees the
        # spectrally blurred spectrum
        grid = DEFAULT_GRID
        ap = build_aperture_model()
        lib = surrogate_library(grid, 2, seed=10)
        bank = SpectralFilterBank(np.random.default_rng(0).normal(size=(3, 100)))
        n = 2 * ap.psfs.shape[1] + 8
        cube = HsiCube(grid, np.broadcast_to(lib[0].values, (n, n, 100)))
        fs = normalize_features(acquire_measurements(cube, ap, None, bank, slm_rows=None))
        blurred = convolve_spectral(lib[0].values, ap.spectral_kernel)
        expected = bank.filters @ blurred / blurred.sum()
        c = n // 2
        np.testing.assert_allclose(fs.features[:, c, c], expected, rtol=1e-9, atol=1e-12)


class TestScanBaseline:
    @pytest.fixture
    def scene(self, rng):
        grid = WavelengthGrid(600, 900, 16)
        cube = HsiCube(grid, rng.uniform(0.5, 1.0, (12, 12, 16)))
        bank = SpectralFilterBank(rng.normal(size=(2, 16)))
        return cube, bank

    def test_noiseless_equals_optical(self, scene):
        cube, bank = scene
        scan = full_scan_then_project(cube, None, None, bank)
        opt = normalize_features(acquire_measurements(cube, None, None, bank, slm_rows=None))
        np.testing.assert_allclose(scan.features, opt.features, rtol=1e-6)
        assert scan.images_captured == 16

    def test_scan_is_noisier(self, scene):
        cube, bank = scene
        clean = full_scan_then_project(cube, None, None, bank).features
        var_scan = var_opt = 0.0
        for seed in range(5):
            nm = NoiseModel(1e4, 0.0, seed)
            var_scan += np.var(full_scan_then_project(cube, None, None, bank, nm).features - clean)
            opt = normalize_features(acquire_measurements(cube, None, None, bank, nm, slm_rows=None))
            var_opt += np.var(opt.features - clean)
        assert var_scan > var_opt

    def test_large_budget_converges(self, scene):
        cube, bank = scene
        clean = full_scan_then_project(cube, None, None, bank).features
        errs = [np.max(np.abs(full_scan_then_project(cube, None, None, bank, NoiseModel(p, 0, 1)).features - clean))
                for p in (1e4, 1e8, 1e12)]
        assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-3

    def test_band_mismatch(self, scene):
        cube, _ = scene
        with pytest.raises(ValidationError):
            full_scan_then_project(cube, None, None, SpectralFilterBank(np.ones((1, 3))))


class TestRoc:
    def test_perfect(self):
        fpr, tpr, _, auc = roc_curve([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        assert auc == 1.0 and fpr[0] == 0 and tpr[-1] == 1

    def test_inverted(self):
        assert roc_curve([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1])[3] == 0.0

    def test_ties(self):
        assert roc_curve([0.5, 0.5], [0, 1])[3] == 0.5

    def test_random_scores(self, rng):
        assert abs(roc_curve(rng.random(20000), rng.integers(0, 2, 20000))[3] - 0.5) < 0.05

    def test_valid_mask_and_nan(self):
        auc = roc_curve([0.1, np.nan, 0.9, 0.0], [0, 1, 1, 1], valid=[1, 1, 1, 0])[3]
        assert auc == 1.0

    def test_single_class(self):
        with pytest.raises(ValidationError):
            roc_curve([0.1, 0.2], [1, 1])

    @given(st.integers(0, 2**32 - 1))
    def test_monotone_transform_invariance(self, seed):
        r = np.random.default_rng(seed)
        s = r.normal(size=50)
        t = np.r_[0, 1, r.integers(0, 2, 48)]
        assert roc_curve(s, t)[3] == pytest.approx(roc_curve(np.exp(3 * s) + 1, t)[3], abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_curve_monotone(self, seed):
        r = np.random.default_rng(seed)
        fpr, tpr, _, auc = roc_curve(r.normal(size=40), np.r_[0, 1, r.integers(0, 2, 38)])
        assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
        assert 0 <= auc <= 1


class TestConfusion:
    def test_hand_example(self):
        rep = confusion_and_accuracy([0, 1, 1, 2], [0, 1, 2, 2], n_classes=3)
        np.testing.assert_array_equal(rep.confusion, [[1, 0, 0], [0, 1, 0], [0, 1, 1]])
        assert rep.accuracy == 0.75
        np.testing.assert_allclose(rep.per_class_accuracy, [1, 1, 0.5])

    def test_unknown_pixels_excluded(self):
        rep = confusion_and_accuracy([0, UNKNOWN_LABEL, 1], [0, 1, 0], n_classes=2)
        assert rep.n_excluded == 1 and rep.accuracy == 0.5

    def test_absent_class_is_nan(self):
        rep = confusion_and_accuracy([0, 0], [0, 0], n_classes=2)
        assert np.isnan(rep.per_class_accuracy[1])

    def test_random_guessing(self, rng):
        rep = confusion_and_accuracy(rng.integers(0, 5, 100000), rng.integers(0, 5, 100000), n_classes=5)
        assert abs(rep.accuracy - 0.2) < 0.01

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=80))
    def test_trace_is_correct_count(self, pairs):
        p, t = np.array(pairs).T
        rep = confusion_and_accuracy(p, t, n_classes=4)
        assert rep.confusion.sum() == len(pairs)
        assert np.trace(rep.confusion) == np.sum(p == t)
        assert rep.accuracy == pytest.approx(np.mean(p == t))

    def test_label_map_and_save(self, tmp_path):
        truth = LabelMap(np.array([[0, 1]]), ("grass", "soil"))
        rep = confusion_and_accuracy(np.array([[0, 0]]), truth, images_captured={"optical": 3})
        assert rep.class_names == ("grass", "soil")
        paths = rep.save(tmp_path)
        assert all(p.exists() for p in paths)
        assert '"optical": 3' in paths[0].read_text()

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            confusion_and_accuracy([0, 1], [0])


@pytest.fixture(scope="module")
def data():
    grid = WavelengthGrid(600, 900, 16)
    X, y = sample_class_spectra(surrogate_library(grid, 3, seed=11), 150, seed=12)
    return split_dataset(sum_normalize(X), y, seed=0)


class TestSweep:

    def test_sweep_rows_and_knee(self, data):
        res = sweep_filter_count(data, [1, 2, 4], epochs=15)
        assert res.q_values == (1, 2, 4) and len(res.rows()) == 3
        best = np.nanmax(res.accuracy)
        knee_acc = res.accuracy[res.q_values.index(res.knee)]
        assert knee_acc >= best - 0.01
        assert all(a < best - 0.01 for q, a in zip(res.q_values, res.accuracy) if q < res.knee)

    def test_failure_recorded(self, data):
        res = sweep_filter_count(data, [2, 40], epochs=2)
        assert np.isnan(res.accuracy[1]) and res.errors[1]
        assert res.knee == 2

    def test_unsorted(self, data):
        with pytest.raises(ValidationError):
            sweep_filter_count(data, [4, 2])


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 1.0, 10.0]))
def test_pixel_scaling_leaves_features_unchanged(seed, alpha):
    r = np.random.default_rng(seed)
    grid = WavelengthGrid(600, 900, 16)
    data = r.uniform(0.01, 1, (3, 3, 16))
    bank = SpectralFilterBank(r.normal(size=(3, 16)))
    scaled = data.copy()
    scaled[1, 2] *= alpha
    a = normalize_features(acquire_measurements(HsiCube(grid, data), None, None, bank)).features
    b = normalize_features(acquire_measurements(HsiCube(grid, scaled), None, None, bank)).features
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))
