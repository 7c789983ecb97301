"""
Deterministic synthetic scenes for tests and desk-scale experiments.

Bright "pristine" scenes are built from an illumination gradient, coloured blobs,
hard-edged rectangles and an oriented texture. Low-light versions come from gamma
darkening plus sensor noise; hazy versions from the forward haze model.
"""

import logging
from pathlib import Path

import numpy as np

from .haze_model import HazeScene, compose_haze
from .image_core import ImagePlane, gaussian_blur, save_image
from .training import synth_lowlight
from .utils import derive_seed, ensure_directory_exists, make_rng

logger = logging.getLogger("lowlight_haze.fixtures")

SCENE_RANGE = (0.08, 0.95)
HAZE_T_RANGE = (0.2, 0.7)
HAZE_A_RANGE = (0.75, 0.95)
FIXTURE_KINDS = ("pairs", "pristine", "darkened", "hazy")


def make_scene(height: int, width: int, seed: int) -> ImagePlane:
    """
    Bright, textured RGB scene in [0.08, 0.95].

    Args:
        height: Rows
        width: Columns
        seed: Scene seed

    Returns:
        Deterministic ImagePlane
    """
    rng = make_rng(seed, "scene")
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)

    tint = rng.uniform(0.6, 1.0, size=3)
    slope = rng.uniform(-0.4, 0.4, size=2)
    scene = (0.55 + slope[0] * (xx - 0.5) + slope[1] * (yy - 0.5))[:, :, None] * tint

    for _ in range(int(rng.integers(3, 6))):
        cy, cx = rng.random(2)
        radius = rng.uniform(0.08, 0.25)
        colour = rng.uniform(-0.35, 0.35, size=3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius**2))
        scene += blob[:, :, None] * colour

    for _ in range(int(rng.integers(2, 5))):
        top, left = rng.integers(0, height), rng.integers(0, width)
        bottom = min(height, top + int(rng.integers(height // 8 + 1, height // 3 + 2)))
        right = min(width, left + int(rng.integers(width // 8 + 1, width // 3 + 2)))
        scene[top:bottom, left:right] += rng.uniform(-0.3, 0.3, size=3)

    angle = rng.uniform(0.0, np.pi)
    frequency = rng.uniform(8.0, 20.0)
    texture = np.sin(2.0 * np.pi * frequency * (xx * np.cos(angle) + yy * np.sin(angle)))
    scene += 0.06 * texture[:, :, None]
    scene += rng.normal(0.0, 0.01, size=scene.shape)

    blurred = gaussian_blur(ImagePlane(np.clip(scene, -1.0, 2.0)), sigma=0.8, radius=2).data
    blurred = blurred.astype(np.float64)
    lo, hi = float(blurred.min()), float(blurred.max())
    scaled = (blurred - lo) / (hi - lo) if hi > lo else np.full_like(blurred, 0.5)
    return ImagePlane(SCENE_RANGE[0] + (SCENE_RANGE[1] - SCENE_RANGE[0]) * scaled)


def make_pair(
    bright: ImagePlane, gamma: float, noise_sigma: float, seed: int
) -> tuple[ImagePlane, ImagePlane]:
    """Return (low, bright) with the low-light image from synth_lowlight."""
    return synth_lowlight(bright, gamma, noise_sigma, seed), bright


def make_hazy(bright: ImagePlane, seed: int) -> ImagePlane:
    """
    Hazy version of a scene: smooth transmission in [0.2, 0.7] and near-white
    ambient light in [0.75, 0.95].
    """
    rng = make_rng(seed, "haze")
    yy, xx = np.mgrid[0 : bright.height, 0 : bright.width].astype(np.float64)
    yy /= max(bright.height - 1, 1)
    xx /= max(bright.width - 1, 1)
    fy, fx = rng.uniform(0.3, 1.2, size=2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wave = np.sin(2.0 * np.pi * (fy * yy + fx * xx) + phase)
    low, high = HAZE_T_RANGE
    transmission = (low + high) / 2.0 + (high - low) / 2.0 * wave

    base = rng.uniform(HAZE_A_RANGE[0], HAZE_A_RANGE[1])
    jitter = rng.uniform(-0.02, 0.02, size=bright.channels)
    ambient = tuple(float(np.clip(base + d, *HAZE_A_RANGE)) for d in jitter)
    scene = HazeScene(clean=bright, transmission=ImagePlane(transmission), ambient=ambient)
    return compose_haze(scene)


def fixture_image(kind: str, index: int, size: int, seed: int, gamma: float, noise_sigma: float):
    """One image of the requested kind; the same index always shares the same scene."""
    bright = make_scene(size, size, derive_seed(seed, f"scene-{index}"))
    if kind == "pristine":
        return bright
    if kind == "darkened":
        return synth_lowlight(bright, gamma, noise_sigma, derive_seed(seed, f"noise-{index}"))
    if kind == "hazy":
        return make_hazy(bright, derive_seed(seed, f"haze-{index}"))
    raise ValueError(f"Unknown fixture kind: {kind} (choose from {FIXTURE_KINDS})")


def _name(index: int) -> str:
    return f"img-{index:04d}.png"


def write_fixture_dataset(
    root: Path,
    paired: int = 30,
    unpaired: int = 0,
    size: int = 64,
    gamma_range: tuple[float, float] = (2.0, 3.0),
    noise_sigma: float = 0.01,
    seed: int = 0,
) -> dict[str, int]:
    """
    Write a paired dataset: ``low/`` for every sample, ``high/`` for the paired ones.

    Unpaired samples take the indices after the paired ones.

    Returns:
        Counts of written paired and unpaired samples
    """
    root = Path(root)
    ensure_directory_exists(root / "low")
    ensure_directory_exists(root / "high")
    for index in range(paired + unpaired):
        bright = make_scene(size, size, derive_seed(seed, f"scene-{index}"))
        gamma = float(make_rng(seed, f"gamma-{index}").uniform(*gamma_range))
        low, _ = make_pair(bright, gamma, noise_sigma, derive_seed(seed, f"noise-{index}"))
        save_image(low, root / "low" / _name(index))
        if index < paired:
            save_image(bright, root / "high" / _name(index))
    logger.info(f"Wrote {paired} paired and {unpaired} unpaired fixtures to {root}")
    return {"paired": paired, "unpaired": unpaired}


def write_fixture_images(
    root: Path,
    kind: str,
    count: int,
    size: int = 64,
    seed: int = 0,
    gamma: float = 2.5,
    noise_sigma: float = 0.0,
    start: int = 0,
) -> list[Path]:
    """
    Write ``count`` images of one kind (pristine, darkened or hazy) into ``root``.

    Images with the same index and seed depict the same scene across kinds.
    """
    root = Path(root)
    ensure_directory_exists(root)
    paths = []
    for index in range(start, start + count):
        image = fixture_image(kind, index, size, seed, gamma, noise_sigma)
        paths.append(save_image(image, root / _name(index)))
    logger.info(f"Wrote {count} {kind} fixtures to {root}")
    return paths
