"""
Image quality metrics: NIQE (no-reference) plus PSNR and SSIM (full-reference).

NIQE compares natural-scene statistics of an image against a model fitted on a
pristine corpus. Statistics are AGGD fits of MSCN coefficients and of their
pairwise neighbour products, collected on sharp patches at two scales.
"""

import json
import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, ndimage
from scipy.special import gammaln

from .errors import DegenerateSampleError, InsufficientPatchesError, ModelError
from .image_core import (
    ImagePlane,
    gaussian_kernel1d,
    require_congruent,
    resample,
    to_grayscale,
)
from .losses import LossWeights, mean, ssim_map
from .tape import Tape
from .utils import ensure_directory_exists

logger = logging.getLogger("lowlight_haze.iqa")

MODEL_VERSION = 1
FEATURE_DIM = 36
DEFAULT_PATCH = 48
MSCN_C = 1.0 / 255.0
SHARPNESS_THRESHOLD = 0.75
SHARPNESS_FLOOR = 1e-6
EIGEN_FLOOR = 1e-10
MIN_AGGD_SAMPLES = 16
MIN_CORPUS = 10
# half-scale tiles of 5×5 still give >= 16 samples per paired product
MIN_PATCH = 10

_ALPHA_GRID = np.arange(0.2, 10.0 + 5e-4, 1e-3)
# r(α) = Γ(2/α)² / (Γ(1/α)·Γ(3/α))
_RATIO_GRID = np.exp(
    2.0 * gammaln(2.0 / _ALPHA_GRID) - gammaln(1.0 / _ALPHA_GRID) - gammaln(3.0 / _ALPHA_GRID)
)


@dataclass(frozen=True)
class MscnField:
    """Mean-subtracted contrast-normalised coefficients with their local statistics."""

    coefficients: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class AggdParams:
    """Asymmetric generalised Gaussian fit."""

    alpha: float
    sigma_left: float
    sigma_right: float
    mean_offset: float


@dataclass(frozen=True)
class IqaScore:
    metric: str
    value: float
    lower_is_better: bool


@dataclass
class NiqeModel:
    """Pristine-corpus feature statistics."""

    feature_mean: np.ndarray
    feature_covariance: np.ndarray
    corpus_size: int
    patch_size: int
    n_patches: int
    version: int = MODEL_VERSION
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "feature_mean": [float(v) for v in self.feature_mean],
            "feature_covariance": [float(v) for v in self.feature_covariance.ravel()],
            "dimension": int(self.feature_mean.size),
            "metadata": {
                "corpus_size": self.corpus_size,
                "patch_size": self.patch_size,
                "n_patches": self.n_patches,
                **self.extra,
            },
        }

    def save(self, path: Path) -> Path:
        path = Path(path)
        ensure_directory_exists(path.parent)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        logger.info(f"NIQE model written to {path}")
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "NiqeModel":
        try:
            version = int(data["version"])
            if version != MODEL_VERSION:
                raise ModelError(f"Unsupported NIQE model version {version}")
            dim = int(data["dimension"])
            mean_vec = np.asarray(data["feature_mean"], dtype=np.float64)
            cov = np.asarray(data["feature_covariance"], dtype=np.float64).reshape(dim, dim)
            meta = dict(data["metadata"])
            corpus_size = int(meta.pop("corpus_size"))
            patch_size = int(meta.pop("patch_size"))
            n_patches = int(meta.pop("n_patches"))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ModelError):
                raise
            raise ModelError(f"Malformed NIQE model: {e}") from e
        if mean_vec.size != dim:
            raise ModelError(f"NIQE mean has {mean_vec.size} entries, expected {dim}")
        return cls(mean_vec, cov, corpus_size, patch_size, n_patches, version, meta)

    @classmethod
    def load(cls, path: Path) -> "NiqeModel":
        path = Path(path)
        if not path.exists():
            raise ModelError(f"NIQE model not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ModelError(f"NIQE model {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)


def _as_gray(img: ImagePlane) -> np.ndarray:
    if img.channels == 3:
        img = to_grayscale(img)
    elif img.channels != 1:
        raise InsufficientPatchesError(f"NIQE needs 1 or 3 channels, got {img.channels}")
    return img.data[:, :, 0].astype(np.float64)


def _mscn_array(gray: np.ndarray, c: float = MSCN_C) -> MscnField:
    taps = gaussian_kernel1d(7.0 / 6.0, 3)
    mu = ndimage.correlate1d(gray, taps, axis=0, mode="reflect")
    mu = ndimage.correlate1d(mu, taps, axis=1, mode="reflect")
    second = ndimage.correlate1d(gray * gray, taps, axis=0, mode="reflect")
    second = ndimage.correlate1d(second, taps, axis=1, mode="reflect")
    sigma = np.sqrt(np.abs(second - mu * mu))
    return MscnField(coefficients=(gray - mu) / (sigma + c), mu=mu, sigma=sigma)


def mscn(gray: ImagePlane, c: float = MSCN_C) -> MscnField:
    """
    MSCN transform on a 7×7 Gaussian window (σ = 7/6).

    Args:
        gray: Single-channel plane (3-channel input is converted to luma)
        c: Stabilising constant in the denominator
    """
    return _mscn_array(_as_gray(gray), c)


def fit_aggd(samples: np.ndarray) -> AggdParams:
    """
    Moment-matching AGGD fit.

    Left/right deviations come from the negative and non-negative halves; the
    shape α is found by matching the generalised Gaussian ratio on a grid over
    [0.2, 10] with step 1e-3.

    Raises:
        DegenerateSampleError: Fewer than 16 samples, or all samples zero
    """
    values = np.asarray(samples, dtype=np.float64).ravel()
    if values.size < MIN_AGGD_SAMPLES:
        raise DegenerateSampleError(
            f"AGGD fit needs >= {MIN_AGGD_SAMPLES} samples, got {values.size}"
        )
    squares = values * values
    mean_square = float(np.mean(squares))
    if mean_square == 0.0:
        raise DegenerateSampleError("AGGD fit on all-zero samples")

    left = squares[values < 0]
    right = squares[values >= 0]
    left_std = math.sqrt(float(np.mean(left))) if left.size else 0.0
    right_std = math.sqrt(float(np.mean(right))) if right.size else 0.0
    # one-sided samples: mirror the observed side
    if left_std == 0.0:
        left_std = right_std
    if right_std == 0.0:
        right_std = left_std

    gamma_hat = left_std / right_std
    r_hat = float(np.mean(np.abs(values))) ** 2 / mean_square
    r_hat_norm = r_hat * ((gamma_hat**3 + 1.0) * (gamma_hat + 1.0)) / (gamma_hat**2 + 1.0) ** 2
    alpha = float(_ALPHA_GRID[np.argmin((_RATIO_GRID - r_hat_norm) ** 2)])

    scale = math.exp(0.5 * (gammaln(1.0 / alpha) - gammaln(3.0 / alpha)))
    sigma_left = scale * left_std
    sigma_right = scale * right_std
    mean_offset = (sigma_right - sigma_left) * math.exp(gammaln(2.0 / alpha) - gammaln(1.0 / alpha))
    return AggdParams(alpha, sigma_left, sigma_right, mean_offset)


def _paired_products(patch: np.ndarray) -> tuple[np.ndarray, ...]:
    horizontal = patch[:, :-1] * patch[:, 1:]
    vertical = patch[:-1, :] * patch[1:, :]
    diagonal = patch[:-1, :-1] * patch[1:, 1:]
    anti_diagonal = patch[:-1, 1:] * patch[1:, :-1]
    return horizontal, vertical, diagonal, anti_diagonal


def _patch_features(patch: np.ndarray) -> list[float]:
    base = fit_aggd(patch)
    features = [base.alpha, (base.sigma_left + base.sigma_right) / 2.0]
    for product in _paired_products(patch):
        fit = fit_aggd(product)
        features.extend([fit.alpha, fit.mean_offset, fit.sigma_left, fit.sigma_right])
    return features


def _patch_grid(height: int, width: int, patch: int) -> list[tuple[int, int]]:
    return [
        (row, col)
        for row in range(height // patch)
        for col in range(width // patch)
    ]


def niqe_features(gray: ImagePlane, patch: int = DEFAULT_PATCH) -> np.ndarray:
    """
    36-dimensional features for every selected patch.

    Patches are non-overlapping tiles at native scale; a tile is kept when its
    sharpness (mean local deviation) reaches 0.75 of the sharpest tile. Each kept
    tile contributes 18 features at native scale and 18 from the co-located tile
    of the half-resolution image.

    Raises:
        InsufficientPatchesError: Image smaller than 2·patch, or no tile selected
    """
    if patch < MIN_PATCH or patch % 2:
        raise InsufficientPatchesError(f"patch size must be even and >= {MIN_PATCH}, got {patch}")
    if gray.height < 2 * patch or gray.width < 2 * patch:
        raise InsufficientPatchesError(
            f"image {gray.height}x{gray.width} is smaller than 2x patch size {patch}"
        )

    native = _mscn_array(_as_gray(gray))
    half_plane = resample(gray if gray.channels == 1 else to_grayscale(gray), 0.5)
    half = _mscn_array(half_plane.data[:, :, 0].astype(np.float64))
    half_patch = patch // 2

    grid = _patch_grid(gray.height, gray.width, patch)
    sharpness = np.array(
        [
            native.sigma[r * patch : (r + 1) * patch, c * patch : (c + 1) * patch].mean()
            for r, c in grid
        ]
    )
    peak = float(sharpness.max())
    if peak < SHARPNESS_FLOOR:
        raise InsufficientPatchesError("no patch has non-zero sharpness")

    rows = []
    for (r, c), value in zip(grid, sharpness, strict=True):
        if value < SHARPNESS_THRESHOLD * peak:
            continue
        tile = native.coefficients[r * patch : (r + 1) * patch, c * patch : (c + 1) * patch]
        half_tile = half.coefficients[
            r * half_patch : (r + 1) * half_patch, c * half_patch : (c + 1) * half_patch
        ]
        try:
            rows.append(_patch_features(tile) + _patch_features(half_tile))
        except DegenerateSampleError:
            continue
    if not rows:
        raise InsufficientPatchesError("no patch passed the sharpness selection")
    return np.asarray(rows, dtype=np.float64)


def _covariance(features: np.ndarray) -> np.ndarray:
    """Population covariance (ddof=0), symmetrised."""
    if features.shape[0] < 2:
        return np.zeros((features.shape[1], features.shape[1]))
    centred = features - features.mean(axis=0)
    cov = centred.T @ centred / features.shape[0]
    return (cov + cov.T) / 2.0


def fit_niqe_model(pristine: Iterable[ImagePlane], patch: int = DEFAULT_PATCH) -> NiqeModel:
    """
    Fit mean and covariance of pooled patch features over a pristine corpus.

    Raises:
        InsufficientPatchesError: Fewer than 10 images, or an image yields no patch
    """
    images = list(pristine)
    if len(images) < MIN_CORPUS:
        raise InsufficientPatchesError(
            f"NIQE model needs at least {MIN_CORPUS} images, got {len(images)}"
        )
    pooled = np.vstack([niqe_features(img, patch) for img in images])
    model = NiqeModel(
        feature_mean=pooled.mean(axis=0),
        feature_covariance=_covariance(pooled),
        corpus_size=len(images),
        patch_size=patch,
        n_patches=int(pooled.shape[0]),
    )
    logger.info(f"Fitted NIQE model on {len(images)} images ({pooled.shape[0]} patches)")
    return model


def _pseudo_inverse(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, eigenvectors = linalg.eigh(matrix)
    kept = eigenvalues > EIGEN_FLOOR
    inverse = np.where(kept, 1.0 / np.where(kept, eigenvalues, 1.0), 0.0)
    return (eigenvectors * inverse) @ eigenvectors.T


def niqe_score(img: ImagePlane, model: NiqeModel) -> IqaScore:
    """
    Distance between the image's patch statistics and the pristine model.

    Raises:
        InsufficientPatchesError: If the image has no selectable patch
    """
    features = niqe_features(img, model.patch_size)
    difference = model.feature_mean - features.mean(axis=0)
    pooled = (model.feature_covariance + _covariance(features)) / 2.0
    pooled = (pooled + pooled.T) / 2.0
    quadratic = float(difference @ _pseudo_inverse(pooled) @ difference)
    return IqaScore("niqe", math.sqrt(max(quadratic, 0.0)), lower_is_better=True)


def psnr(a: ImagePlane, b: ImagePlane) -> IqaScore:
    """Peak signal-to-noise ratio for unit-range images; +inf when identical."""
    require_congruent(a, b)
    mse = float(np.mean((a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2))
    value = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return IqaScore("psnr", value, lower_is_better=False)


def ssim_metric(a: ImagePlane, b: ImagePlane, weights: LossWeights | None = None) -> IqaScore:
    """Mean SSIM, computed with the same kernel as the SSIM loss."""
    require_congruent(a, b)
    prediction = Tape(np.float64).constant(b.data)
    value = float(mean(ssim_map(a, prediction, weights or LossWeights())).data)
    return IqaScore("ssim", value, lower_is_better=False)


def choose_patch_size(images: Iterable[ImagePlane], preferred: int = DEFAULT_PATCH) -> int:
    """
    Largest even patch size up to ``preferred`` that fits twice into every image.

    Raises:
        InsufficientPatchesError: If no image is given or even a MIN_PATCH-pixel
            patch does not fit
    """
    sides = [min(img.height, img.width) for img in images]
    if not sides:
        raise InsufficientPatchesError("no images given to size NIQE patches from")
    smallest = min(sides)
    patch = min(preferred, smallest // 2)
    patch -= patch % 2
    if patch < MIN_PATCH:
        raise InsufficientPatchesError(f"images of side {smallest} are too small for NIQE")
    return patch
