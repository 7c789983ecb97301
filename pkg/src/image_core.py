"""Image planes, PNG I/O and the pixel-level primitives the rest of the engine builds on."""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import ImageDecodeError, ShapeMismatchError
from .utils import ensure_directory_exists

logger = logging.getLogger("lowlight_haze.image")

# Rec.601 luma weights
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

SUPPORTED_MODES = {"L": 1, "RGB": 3}


@dataclass(frozen=True)
class ImagePlane:
    """
    Immutable H×W×C tensor of intensities.

    ``data`` is stored as a read-only float32 array of shape (height, width, channels).
    A 2-D array is accepted and given a single channel axis.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        array = np.array(self.data, dtype=np.float32, copy=True)
        if array.ndim == 2:
            array = array[:, :, np.newaxis]
        if array.ndim != 3:
            raise ShapeMismatchError(
                f"ImagePlane needs a 2-D or 3-D array, got shape {array.shape}"
            )
        if array.shape[0] < 1 or array.shape[1] < 1 or array.shape[2] < 1:
            raise ShapeMismatchError(f"ImagePlane dimensions must be positive, got {array.shape}")
        array.setflags(write=False)
        object.__setattr__(self, "data", array)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def mean(self) -> float:
        return float(np.mean(self.data, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.data.size)


@dataclass
class Histogram:
    """Per-channel intensity histogram."""

    bins: int
    counts: np.ndarray = field(repr=False)
    normalized: bool = False

    @property
    def channels(self) -> int:
        return int(self.counts.shape[0])

    def normalize(self) -> "Histogram":
        """Return a copy whose counts sum to 1 per channel."""
        totals = self.counts.sum(axis=1, keepdims=True)
        totals = np.where(totals == 0, 1.0, totals)
        return Histogram(self.bins, self.counts / totals, normalized=True)


def require_congruent(a: ImagePlane, b: ImagePlane, what: str = "images") -> None:
    """Raise ShapeMismatchError unless both planes share a shape."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} must have identical shapes, got {a.shape} and {b.shape}")


def normalize(data: np.ndarray) -> ImagePlane:
    """
    Map raw pixel data into a unit-range plane.

    Integer arrays are divided by their dtype maximum; float arrays are clipped to [0, 1].
    """
    array = np.asarray(data)
    if np.issubdtype(array.dtype, np.integer):
        scaled = array.astype(np.float64) / float(np.iinfo(array.dtype).max)
    else:
        scaled = np.clip(array.astype(np.float64), 0.0, 1.0)
    return ImagePlane(scaled)


def load_image(path: Path) -> ImagePlane:
    """
    Load an 8-bit grayscale or RGB PNG into a unit-range plane.

    Args:
        path: PNG file path

    Returns:
        ImagePlane with values scaled by 1/255 and the channel count preserved

    Raises:
        FileNotFoundError: If the file does not exist
        ImageDecodeError: If the file is not an 8-bit L/RGB image
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image file not found: {path}")

    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode not in SUPPORTED_MODES:
                raise ImageDecodeError(f"Unsupported image mode {mode!r} in {path}")
            array = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise ImageDecodeError(f"Cannot decode image {path}: {e}") from e

    logger.debug(f"Loaded {path.name}: {array.shape} mode={mode}")
    return normalize(array)


def to_bytes(img: ImagePlane) -> np.ndarray:
    """Quantize a plane to uint8 with round-half-to-even on value·255."""
    return np.rint(np.clip(img.data.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: ImagePlane, path: Path) -> Path:
    """
    Save a plane as an 8-bit PNG (grayscale for 1 channel, RGB for 3).

    The encoder settings are pinned so identical planes give identical files.

    Args:
        img: Plane with values in [0, 1]
        path: Destination path

    Returns:
        The path written
    """
    if img.channels not in (1, 3):
        raise ShapeMismatchError(f"Only 1- or 3-channel planes can be saved, got {img.channels}")

    path = Path(path)
    ensure_directory_exists(path.parent)
    pixels = to_bytes(img)
    if img.channels == 1:
        pil_image = Image.fromarray(pixels[:, :, 0])
    else:
        pil_image = Image.fromarray(pixels)
    pil_image.save(path, format="PNG", optimize=False, compress_level=6)
    return path


def invert(img: ImagePlane) -> ImagePlane:
    """Return 1 − img elementwise."""
    return ImagePlane(1.0 - img.data.astype(np.float64))


def gamma_correct(img: ImagePlane, gamma: float) -> ImagePlane:
    """
    Apply the power law x ↦ x^gamma.

    Raises:
        ValueError: If gamma is not positive
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if gamma == 1:
        return img
    return ImagePlane(np.power(np.maximum(img.data.astype(np.float64), 0.0), gamma))


def to_grayscale(img: ImagePlane) -> ImagePlane:
    """Convert an RGB plane to Rec.601 luma."""
    if img.channels != 3:
        raise ShapeMismatchError(f"to_grayscale needs 3 channels, got {img.channels}")
    gray = np.tensordot(img.data.astype(np.float64), GRAY_WEIGHTS, axes=([2], [0]))
    return ImagePlane(np.clip(gray, 0.0, 1.0))


def clamp_unit(img: ImagePlane) -> ImagePlane:
    """Clip every value into [0, 1]."""
    return ImagePlane(np.clip(img.data, 0.0, 1.0))


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps of length 2·radius + 1 (float64)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (offsets / sigma) ** 2)
    return taps / taps.sum()


def gaussian_kernel2d(sigma: float, radius: int) -> np.ndarray:
    """Normalized separable 2-D Gaussian kernel."""
    taps = gaussian_kernel1d(sigma, radius)
    return np.outer(taps, taps)


def separable_filter(data: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """
    Correlate the two spatial axes of an H×W(×C) array with ``taps``.

    Uses symmetric (mirror) boundary extension and float64 accumulation.
    """
    out = np.asarray(data, dtype=np.float64)
    out = ndimage.correlate1d(out, taps, axis=0, mode="reflect")
    return ndimage.correlate1d(out, taps, axis=1, mode="reflect")


def _range_of(img: ImagePlane) -> tuple[float, float]:
    return float(img.data.min()), float(img.data.max())


def gaussian_blur(img: ImagePlane, sigma: float, radius: int) -> ImagePlane:
    """
    Separable Gaussian blur with symmetric padding.

    The output never leaves the input's value range.
    """
    blurred = separable_filter(img.data, gaussian_kernel1d(sigma, radius))
    lo, hi = _range_of(img)
    return ImagePlane(np.clip(blurred, lo, hi))


def median_filter(img: ImagePlane, radius: int) -> ImagePlane:
    """Per-channel (2r+1)×(2r+1) window median with symmetric padding."""
    if radius < 1:
        raise ValueError(f"median radius must be >= 1, got {radius}")
    size = 2 * radius + 1
    filtered = ndimage.median_filter(img.data, size=(size, size, 1), mode="reflect")
    return ImagePlane(filtered)


def _resample_axis(data: np.ndarray, new_length: int, axis: int) -> np.ndarray:
    length = data.shape[axis]
    coords = (np.arange(new_length, dtype=np.float64) + 0.5) * (length / new_length) - 0.5
    coords = np.clip(coords, 0.0, length - 1)
    lower = np.floor(coords).astype(np.intp)
    upper = np.minimum(lower + 1, length - 1)
    weight = coords - lower
    shape = [1] * data.ndim
    shape[axis] = new_length
    weight = weight.reshape(shape)
    below = np.take(data, lower, axis=axis)
    above = np.take(data, upper, axis=axis)
    return below * (1.0 - weight) + above * weight


def resample(img: ImagePlane, factor: float) -> ImagePlane:
    """
    Bilinear resampling by 0.5 or 2.0 with half-pixel centres.

    Halving rounds dimensions down.

    Raises:
        ValueError: If factor is not 0.5 or 2.0, or a result dimension would be < 1
    """
    if factor == 0.5:
        new_h, new_w = img.height // 2, img.width // 2
    elif factor == 2.0:
        new_h, new_w = img.height * 2, img.width * 2
    else:
        raise ValueError(f"resample factor must be 0.5 or 2.0, got {factor}")
    if new_h < 1 or new_w < 1:
        raise ValueError(f"resample of {img.height}x{img.width} by {factor} is empty")

    data = img.data.astype(np.float64)
    data = _resample_axis(data, new_h, axis=0)
    data = _resample_axis(data, new_w, axis=1)
    lo, hi = _range_of(img)
    return ImagePlane(np.clip(data, lo, hi))


def down_up(img: ImagePlane) -> ImagePlane:
    """Halve then double an image, cropping or edge-padding back to the original size."""
    if img.height < 2 or img.width < 2:
        return img
    restored = resample(resample(img, 0.5), 2.0).data
    pad_h = img.height - restored.shape[0]
    pad_w = img.width - restored.shape[1]
    if pad_h or pad_w:
        restored = np.pad(restored, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    return ImagePlane(restored)


def histogram(img: ImagePlane, bins: int = 256) -> Histogram:
    """
    Per-channel histogram; value v falls in bin min(floor(v·bins), bins−1).

    Counts for each channel sum to height × width.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    values = img.data.astype(np.float64)
    index = np.clip(np.floor(values * bins).astype(np.int64), 0, bins - 1)
    counts = np.stack(
        [np.bincount(index[:, :, c].ravel(), minlength=bins) for c in range(img.channels)]
    ).astype(np.float64)
    return Histogram(bins=bins, counts=counts)
