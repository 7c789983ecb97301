"""Histogram comparison between inverted low-light images and hazy images."""

import logging
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .image_core import Histogram, ImagePlane, histogram, invert, load_image
from .utils import list_images, write_csv

logger = logging.getLogger("lowlight_haze.analysis")

HISTOGRAM_HEADER = ["bin", "channel", "count"]


@dataclass(frozen=True)
class HistogramComparison:
    first: Histogram
    second: Histogram
    correlation: float


def average_histogram(
    images: Iterable[ImagePlane], bins: int = 256, inverted: bool = False
) -> Histogram:
    """
    Mean of the per-image normalised histograms.

    Args:
        images: Images with a common channel count
        bins: Bin count
        inverted: Invert every image first

    Raises:
        DatasetError: If no image is given
    """
    total = None
    count = 0
    for img in images:
        hist = histogram(invert(img) if inverted else img, bins).normalize()
        if total is not None and hist.counts.shape != total.shape:
            raise DatasetError(f"Channel count changes within the image set: {hist.counts.shape}")
        total = hist.counts if total is None else total + hist.counts
        count += 1
    if total is None:
        raise DatasetError("Cannot average histograms of an empty image set")
    return Histogram(bins, total / count, normalized=True)


def pearson(a: Histogram, b: Histogram) -> float:
    """
    Pearson correlation of two histograms over all channels and bins.

    Raises:
        DatasetError: If the shapes differ or either histogram is constant
    """
    if a.counts.shape != b.counts.shape:
        raise DatasetError(f"Histogram shapes differ: {a.counts.shape} vs {b.counts.shape}")
    for label, hist in (("first", a), ("second", b)):
        if float(np.ptp(hist.counts)) == 0.0:
            raise DatasetError(f"The {label} histogram is constant; correlation is undefined")
    return float(np.corrcoef(a.counts.ravel(), b.counts.ravel())[0, 1])


def load_directory(directory: Path) -> list[ImagePlane]:
    """
    Load every PNG in a directory.

    Raises:
        DatasetError: If the directory holds no PNG files
    """
    paths = list_images(Path(directory))
    if not paths:
        raise DatasetError(f"No images found in {directory}")
    return [load_image(p) for p in paths]


def compare_directories(
    first: Path, second: Path, bins: int = 256, invert_first: bool = True
) -> HistogramComparison:
    """Average histograms of two directories (the first optionally inverted) and correlate."""
    hist_a = average_histogram(load_directory(first), bins, inverted=invert_first)
    hist_b = average_histogram(load_directory(second), bins)
    correlation = pearson(hist_a, hist_b)
    logger.info(f"Histogram correlation {first} vs {second}: {correlation:.6f}")
    return HistogramComparison(hist_a, hist_b, correlation)


def write_histogram_csv(path: Path, hist: Histogram) -> Path:
    """Write a histogram as ``bin,channel,count`` rows."""
    rows = (
        [bin_index, channel, float(hist.counts[channel, bin_index])]
        for channel in range(hist.channels)
        for bin_index in range(hist.bins)
    )
    return write_csv(Path(path), HISTOGRAM_HEADER, rows)
