"""Utility functions shared by the enhancement engine and its CLI."""

import csv
import logging
import sys
import zlib
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

LOGGER_NAME = "lowlight_haze"

IMAGE_SUFFIXES = (".png",)


def setup_logging(level: str = "INFO") -> logging.Logger:
    """
    Configure and return application logger.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(getattr(logging, level))

    # Remove existing handlers
    logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(getattr(logging, level))

    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    console_handler.setFormatter(formatter)

    logger.addHandler(console_handler)

    return logger


def ensure_directory_exists(path: Path) -> None:
    """
    Create directory if it doesn't exist.

    Args:
        path: Directory path to create
    """
    path.mkdir(parents=True, exist_ok=True)


def derive_seed(seed: int, name: str) -> int:
    """
    Derive a named sub-seed from the run seed.

    The same (seed, name) pair always yields the same value, and different names
    give independent streams, so e.g. the shuffle order can be reproduced without
    replaying weight initialisation.

    Args:
        seed: Run-level seed
        name: Stream name (init, shuffle, augment, noise, split, ...)

    Returns:
        32-bit unsigned integer seed
    """
    sequence = np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
    return int(sequence.generate_state(1)[0])


def make_rng(seed: int, name: str) -> np.random.Generator:
    """Return a numpy Generator for the named sub-seed."""
    return np.random.default_rng(derive_seed(seed, name))


def list_images(directory: Path) -> list[Path]:
    """
    List image files in a directory in deterministic (name) order.

    Args:
        directory: Directory to scan (non-recursive)

    Returns:
        Sorted list of image paths; empty if the directory does not exist
    """
    if not directory.is_dir():
        return []
    return sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def format_number(value: float) -> str:
    """Format a float for CSV output so identical runs produce identical bytes."""
    value = float(value)
    if np.isnan(value):
        return "nan"
    if np.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """
    Write a CSV report with a header row.

    Floats are rendered with format_number; everything else with str().

    Args:
        path: Output file
        header: Column names
        rows: Row values in column order

    Returns:
        The path written
    """
    ensure_directory_exists(path.parent)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_number(v) if isinstance(v, float | np.floating) else str(v) for v in row]
            )
    return path


def append_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """Append rows to a CSV report, writing the header first if the file is new."""
    if not path.exists():
        return write_csv(path, header, rows)
    with open(path, "a", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        for row in rows:
            writer.writerow(
                [format_number(v) if isinstance(v, float | np.floating) else str(v) for v in row]
            )
    return path
