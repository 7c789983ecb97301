"""Unit tests for NIQE, PSNR and SSIM."""

import json
import math

import numpy as np
import pytest

from src.errors import (
    DegenerateSampleError,
    InsufficientPatchesError,
    ModelError,
    ShapeMismatchError,
)
from src.fixtures import make_scene
from src.image_core import ImagePlane
from src.iqa import (
    FEATURE_DIM,
    NiqeModel,
    choose_patch_size,
    fit_aggd,
    fit_niqe_model,
    mscn,
    niqe_features,
    niqe_score,
    psnr,
    ssim_metric,
)
from src.losses import ssim_loss

CORPUS_SIZE = 10
CORPUS_SIDE = 40
CORPUS_PATCH = 20


@pytest.fixture(scope="module")
def corpus():
    """Ten small bright scenes."""
    return [make_scene(CORPUS_SIDE, CORPUS_SIDE, seed) for seed in range(CORPUS_SIZE)]


@pytest.fixture(scope="module")
def model(corpus):
    """NIQE model fitted on the corpus."""
    return fit_niqe_model(corpus, CORPUS_PATCH)


class TestMscn:
    """Test cases for the MSCN transform."""

    def test_constant_image(self):
        """Test that a constant image gives zero coefficients."""
        field = mscn(ImagePlane(np.full((12, 12), 0.4)))
        np.testing.assert_allclose(field.coefficients, 0.0, atol=1e-6)

    def test_affine_invariance(self, rng):
        """Test invariance to a·I + b up to the stabilising constant."""
        data = rng.random((32, 32))
        base = mscn(ImagePlane(data)).coefficients
        shifted = mscn(ImagePlane(0.5 * data + 0.2)).coefficients
        assert float(np.mean(np.abs(base - shifted))) < 0.05

    def test_checkerboard(self):
        """Test alternating signs and zero mean away from the borders."""
        board = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float64)
        coefficients = mscn(ImagePlane(board)).coefficients[4:12, 4:12]
        inner = board[4:12, 4:12]
        assert np.all(coefficients[inner == 1] > 0)
        assert np.all(coefficients[inner == 0] < 0)
        assert abs(float(coefficients.mean())) < 1e-3

    def test_rgb_input_uses_luma(self, rng):
        """Test that RGB input is converted to one channel."""
        field = mscn(ImagePlane(rng.random((10, 10, 3))))
        assert field.coefficients.shape == (10, 10)


class TestFitAggd:
    """Test cases for the moment-matching AGGD fit."""

    def test_gaussian(self):
        """Test recovery of a Gaussian (α ≈ 2, symmetric scales)."""
        samples = np.random.default_rng(0).normal(size=100_000)
        fit = fit_aggd(samples)
        assert 1.85 <= fit.alpha <= 2.15
        assert 0.95 <= fit.sigma_left / fit.sigma_right <= 1.05

    def test_laplacian(self):
        """Test recovery of a Laplacian (α ≈ 1)."""
        samples = np.random.default_rng(1).laplace(size=100_000)
        assert 0.9 <= fit_aggd(samples).alpha <= 1.1

    def test_scale_equivariance(self):
        """Test that scaling samples scales σ and keeps α."""
        samples = np.random.default_rng(2).normal(size=20_000)
        base = fit_aggd(samples)
        scaled = fit_aggd(3.0 * samples)
        assert scaled.alpha == pytest.approx(base.alpha, abs=1e-3)
        assert scaled.sigma_left == pytest.approx(3.0 * base.sigma_left, rel=0.02)
        assert scaled.sigma_right == pytest.approx(3.0 * base.sigma_right, rel=0.02)

    def test_alpha_within_grid(self, rng):
        """Test that α stays inside the search grid."""
        fit = fit_aggd(rng.uniform(-1.0, 1.0, size=500))
        assert 0.2 <= fit.alpha <= 10.0
        assert fit.sigma_left > 0 and fit.sigma_right > 0

    def test_all_zero(self):
        """Test that all-zero samples are degenerate."""
        with pytest.raises(DegenerateSampleError):
            fit_aggd(np.zeros(64))

    def test_too_few_samples(self):
        """Test the minimum sample count."""
        with pytest.raises(DegenerateSampleError):
            fit_aggd(np.ones(10))


class TestNiqeFeatures:
    """Test cases for patch feature extraction."""

    def test_white_noise_keeps_every_patch(self, rng):
        """Test that uniform noise passes the sharpness rule on every tile."""
        features = niqe_features(ImagePlane(rng.random((64, 64))), patch=16)
        assert features.shape == (16, FEATURE_DIM)
        assert np.all(np.isfinite(features))

    def test_constant_image(self):
        """Test that a constant image has no selectable patch."""
        with pytest.raises(InsufficientPatchesError):
            niqe_features(ImagePlane(np.full((64, 64), 0.5)), patch=16)

    def test_image_too_small(self, rng):
        """Test that the image must hold two patches per side."""
        with pytest.raises(InsufficientPatchesError):
            niqe_features(ImagePlane(rng.random((30, 64))), patch=16)

    def test_odd_patch_rejected(self, rng):
        """Test that the patch size must be even."""
        with pytest.raises(InsufficientPatchesError):
            niqe_features(ImagePlane(rng.random((64, 64))), patch=15)


class TestNiqeModel:
    """Test cases for model fitting, scoring and persistence."""

    def test_dimensions(self, model):
        """Test the model's shapes and metadata."""
        assert model.feature_mean.shape == (FEATURE_DIM,)
        assert model.feature_covariance.shape == (FEATURE_DIM, FEATURE_DIM)
        assert model.corpus_size == CORPUS_SIZE
        assert model.patch_size == CORPUS_PATCH

    def test_covariance_symmetric_psd(self, model):
        """Test symmetry and positive semi-definiteness."""
        cov = model.feature_covariance
        np.testing.assert_allclose(cov, cov.T, atol=1e-9)
        assert float(np.linalg.eigvalsh(cov).min()) >= -1e-8

    def test_order_invariance(self, corpus, model):
        """Test that reordering the corpus gives the same model."""
        reordered = fit_niqe_model(list(reversed(corpus)), CORPUS_PATCH)
        np.testing.assert_allclose(reordered.feature_mean, model.feature_mean, atol=1e-12)
        np.testing.assert_allclose(
            reordered.feature_covariance, model.feature_covariance, atol=1e-9
        )

    def test_duplication_invariance(self, corpus, model):
        """Test that duplicating every image leaves the statistics unchanged."""
        doubled = fit_niqe_model(corpus + corpus, CORPUS_PATCH)
        np.testing.assert_allclose(doubled.feature_mean, model.feature_mean, atol=1e-12)
        np.testing.assert_allclose(doubled.feature_covariance, model.feature_covariance, atol=1e-9)

    def test_small_corpus(self, corpus):
        """Test that fewer than ten images are refused."""
        with pytest.raises(InsufficientPatchesError):
            fit_niqe_model(corpus[:5], CORPUS_PATCH)

    def test_score_is_non_negative(self, corpus, model):
        """Test that scores are finite and non-negative."""
        for image in corpus[:3]:
            score = niqe_score(image, model)
            assert score.metric == "niqe"
            assert score.lower_is_better
            assert 0.0 <= score.value < math.inf

    def test_score_is_deterministic(self, corpus, model):
        """Test repeatable scoring."""
        assert niqe_score(corpus[0], model).value == niqe_score(corpus[0], model).value

    def test_json_round_trip(self, tmp_path, model):
        """Test saving and loading a model."""
        path = model.save(tmp_path / "model.json")
        loaded = NiqeModel.load(path)
        np.testing.assert_array_equal(loaded.feature_mean, model.feature_mean)
        np.testing.assert_array_equal(loaded.feature_covariance, model.feature_covariance)
        assert loaded.patch_size == model.patch_size
        assert loaded.n_patches == model.n_patches

    def test_version_mismatch(self, tmp_path, model):
        """Test that a different model version is refused."""
        data = model.to_dict()
        data["version"] = 99
        path = tmp_path / "model.json"
        path.write_text(json.dumps(data))
        with pytest.raises(ModelError):
            NiqeModel.load(path)

    def test_missing_model(self, tmp_path):
        """Test that a missing file raises ModelError."""
        with pytest.raises(ModelError):
            NiqeModel.load(tmp_path / "absent.json")

    def test_malformed_model(self, tmp_path):
        """Test that missing fields raise ModelError."""
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"version": 1}))
        with pytest.raises(ModelError):
            NiqeModel.load(path)


class TestChoosePatchSize:
    """Test cases for automatic patch sizing."""

    def test_preferred_fits(self):
        """Test that the preferred size is kept when it fits."""
        assert choose_patch_size([ImagePlane(np.zeros((128, 100)))], 48) == 48

    def test_reduced_to_fit(self):
        """Test reduction to the largest even size fitting twice."""
        assert choose_patch_size([ImagePlane(np.zeros((64, 64)))], 48) == 32
        assert choose_patch_size([ImagePlane(np.zeros((30, 64)))], 48) == 14

    def test_too_small(self):
        """Test that tiny images are rejected."""
        with pytest.raises(InsufficientPatchesError):
            choose_patch_size([ImagePlane(np.zeros((16, 16)))], 48)

    def test_no_images(self):
        """Test that an empty image set is reported as a NIQE error."""
        with pytest.raises(InsufficientPatchesError, match="no images"):
            choose_patch_size(iter([]), 48)


class TestFullReference:
    """Test cases for PSNR and SSIM."""

    def test_psnr_identical(self, random_plane):
        """Test the infinite sentinel."""
        assert psnr(random_plane, random_plane).value == math.inf

    def test_psnr_twenty_db(self):
        """Test MSE 0.01 → 20 dB."""
        a = ImagePlane(np.full((4, 4, 3), 0.5))
        b = ImagePlane(np.full((4, 4, 3), 0.6))
        assert psnr(a, b).value == pytest.approx(20.0, abs=1e-4)

    def test_psnr_zero_db(self):
        """Test MSE 1 → 0 dB."""
        a = ImagePlane(np.zeros((4, 4, 3)))
        b = ImagePlane(np.ones((4, 4, 3)))
        assert psnr(a, b).value == pytest.approx(0.0, abs=1e-12)

    def test_ssim_identical(self, rng):
        """Test SSIM(x, x) = 1."""
        image = ImagePlane(rng.random((12, 12, 3)))
        assert ssim_metric(image, image).value == pytest.approx(1.0, abs=1e-9)

    def test_ssim_constant(self):
        """Test constant 0.2 against constant 0.8."""
        a = ImagePlane(np.full((12, 12, 3), 0.2))
        b = ImagePlane(np.full((12, 12, 3), 0.8))
        assert ssim_metric(a, b).value == pytest.approx(0.470666, abs=1e-5)

    def test_ssim_symmetric_and_matches_loss(self, rng):
        """Test symmetry and agreement with 1 − ssim_loss."""
        a = ImagePlane(rng.random((12, 12, 3)))
        b = ImagePlane(rng.random((12, 12, 3)))
        forward = ssim_metric(a, b).value
        assert ssim_metric(b, a).value == pytest.approx(forward, abs=1e-12)
        assert forward == pytest.approx(1.0 - ssim_loss(a, b), abs=1e-9)

    def test_shape_mismatch(self, random_plane):
        """Test that congruent shapes are required."""
        with pytest.raises(ShapeMismatchError):
            psnr(random_plane, ImagePlane(np.zeros((4, 4, 3))))
