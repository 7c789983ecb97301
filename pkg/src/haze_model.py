"""
Closed-form haze mathematics and the invert → solve → re-invert enhancement chain.

The observed hazy image follows I = J·t + A·(1 − t). Inverting a low-light image
L gives a hazy-looking I' = 1 − L whose recovery B can be written either in closed
form from (t, A) or through a single atmospheric field h with B = h·(I' − 1) + c.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, SingularityError
from .image_core import ImagePlane, invert
from .tape import Var

logger = logging.getLogger("lowlight_haze.haze")

T_MIN = 0.05
EPS_DEN = 1e-4
DEFAULT_C = 1.0

Ambient = ImagePlane | float | Sequence[float]


@dataclass(frozen=True)
class HazeScene:
    """Ground-truth fields (J, t, A) for forward composition."""

    clean: ImagePlane
    transmission: ImagePlane
    ambient: Ambient

    def __post_init__(self) -> None:
        if self.transmission.channels != 1:
            raise ShapeMismatchError(
                f"transmission must have 1 channel, got {self.transmission.channels}"
            )
        _require_spatial(self.clean, self.transmission, "clean image and transmission")
        _ambient_array(self.ambient, self.clean)


@dataclass(frozen=True)
class AtmosphericMap:
    """
    The atmospheric field h and the constant c.

    ``h`` is kept as a float64 H×W×3 array because it is unbounded; ``plane`` gives
    an ImagePlane view for display and I/O.
    """

    h: np.ndarray
    c: float = DEFAULT_C

    def __post_init__(self) -> None:
        array = np.asarray(self.h, dtype=np.float64)
        if array.ndim == 2:
            array = array[:, :, np.newaxis]
        if array.ndim != 3:
            raise ShapeMismatchError(f"h must be H×W×C, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise SingularityError("h contains non-finite values")
        array = array.copy()
        array.setflags(write=False)
        object.__setattr__(self, "h", array)

    @classmethod
    def constant(
        cls, height: int, width: int, value: float, c: float = DEFAULT_C
    ) -> "AtmosphericMap":
        return cls(np.full((height, width, 3), value, dtype=np.float64), c)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.h.shape)

    @property
    def plane(self) -> ImagePlane:
        return ImagePlane(self.h)


def _require_spatial(a: ImagePlane, b: ImagePlane, what: str) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeMismatchError(f"{what} must be spatially congruent, got {a.shape} and {b.shape}")


def _ambient_array(ambient: Ambient, like: ImagePlane) -> np.ndarray:
    """Broadcastable float64 array for an ambient plane, scalar or per-channel tuple."""
    if isinstance(ambient, ImagePlane):
        _require_spatial(ambient, like, "ambient and image")
        if ambient.channels not in (1, like.channels):
            raise ShapeMismatchError(
                f"ambient has {ambient.channels} channels, image has {like.channels}"
            )
        return ambient.data.astype(np.float64)
    values = np.atleast_1d(np.asarray(ambient, dtype=np.float64))
    if values.ndim != 1 or values.size not in (1, like.channels):
        raise ShapeMismatchError(
            f"ambient must be a scalar or one value per channel, got {ambient}"
        )
    return values.reshape(1, 1, -1)


def _transmission(t: ImagePlane, like: ImagePlane, t_min: float | None) -> np.ndarray:
    _require_spatial(t, like, "transmission and image")
    if t.channels not in (1, like.channels):
        raise ShapeMismatchError(
            f"transmission has {t.channels} channels, image has {like.channels}"
        )
    data = t.data.astype(np.float64)
    if t_min is not None and float(data.min()) < t_min:
        raise SingularityError(
            f"transmission {float(data.min()):.3g} is below t_min={t_min}; recovery is singular"
        )
    return data


def compose_haze(scene: HazeScene) -> ImagePlane:
    """
    Forward haze formation I = J·t + A·(1 − t).

    Args:
        scene: Clean image, transmission and ambient light

    Returns:
        Hazy image in [0, 1]
    """
    clean = scene.clean.data.astype(np.float64)
    t = _transmission(scene.transmission, scene.clean, t_min=None)
    ambient = _ambient_array(scene.ambient, scene.clean)
    hazy = clean * t + ambient * (1.0 - t)
    return ImagePlane(np.clip(hazy, 0.0, 1.0))


def recover_closed_form(
    hazy: ImagePlane, scene_t: ImagePlane, scene_ambient: Ambient, t_min: float = T_MIN
) -> ImagePlane:
    """
    Closed-form recovery B = I'/t − A/t + A.

    Raises:
        SingularityError: If any transmission value is below t_min
    """
    t = _transmission(scene_t, hazy, t_min=t_min)
    ambient = _ambient_array(scene_ambient, hazy)
    observed = hazy.data.astype(np.float64)
    return ImagePlane(observed / t - ambient / t + ambient)


def h_from_components(
    hazy: ImagePlane,
    t: ImagePlane,
    ambient: Ambient,
    c: float = DEFAULT_C,
    eps_den: float = EPS_DEN,
    t_min: float = T_MIN,
) -> AtmosphericMap:
    """
    Evaluate h = ((I' − A)/t + (A − c)) / (I' − 1) elementwise.

    This is a test oracle: the learned path never divides by I' − 1.

    Raises:
        SingularityError: If |I' − 1| < eps_den anywhere or t < t_min
    """
    transmission = _transmission(t, hazy, t_min=t_min)
    ambient_values = _ambient_array(ambient, hazy)
    observed = hazy.data.astype(np.float64)
    denominator = observed - 1.0
    if float(np.min(np.abs(denominator))) < eps_den:
        raise SingularityError(f"|I' - 1| falls below {eps_den}; h is undefined there")
    numerator = (observed - ambient_values) / transmission + (ambient_values - c)
    h = numerator / denominator
    if h.shape[2] == 1:
        h = np.repeat(h, 3, axis=2)
    return AtmosphericMap(h, c)


def _require_h_shape(hazy: ImagePlane, h_map: AtmosphericMap) -> None:
    if h_map.shape[:2] != (hazy.height, hazy.width) or h_map.shape[2] not in (1, hazy.channels):
        raise ShapeMismatchError(f"h map {h_map.shape} does not match image {hazy.shape}")


def apply_h_raw(hazy: ImagePlane, h_map: AtmosphericMap) -> np.ndarray:
    """B = h·(I' − 1) + c as an unclamped float64 array."""
    _require_h_shape(hazy, h_map)
    return h_map.h * (hazy.data.astype(np.float64) - 1.0) + h_map.c


def apply_h(hazy: ImagePlane, h_map: AtmosphericMap) -> ImagePlane:
    """
    Reformulated recovery B = h·(I' − 1) + c, not clamped.

    Raises:
        ShapeMismatchError: If h and the image are not congruent
    """
    return ImagePlane(apply_h_raw(hazy, h_map))


def apply_h_clamped(hazy: ImagePlane, h_map: AtmosphericMap) -> ImagePlane:
    """Clamped variant of apply_h for image output."""
    return ImagePlane(np.clip(apply_h_raw(hazy, h_map), 0.0, 1.0))


def enhance(low: ImagePlane, h_map: AtmosphericMap) -> ImagePlane:
    """
    Full chain: invert, solve with h, re-invert, clamp.

    With h ≡ 1 and c = 1 the output equals the input exactly.
    """
    _require_h_shape(low, h_map)
    inverted = 1.0 - low.data.astype(np.float64)
    recovered = h_map.h * (inverted - 1.0) + h_map.c
    return ImagePlane(np.clip(1.0 - recovered, 0.0, 1.0))


def enhance_traced(low: ImagePlane, h: Var, c: float = DEFAULT_C) -> Var:
    """
    Differentiable form of the chain for training: returns the unclamped 1 − B.

    The loss sees raw values, so no clamping happens here.
    """
    inverted = invert(low).data.astype(h.data.dtype)
    recovered = h * (inverted - 1.0) + c
    return 1.0 - recovered


def random_scene(
    height: int,
    width: int,
    rng: np.random.Generator,
    t_range: tuple[float, float] = (T_MIN, 1.0),
    channels: int = 3,
) -> HazeScene:
    """Draw a scene with uniform J, t and per-channel A (used by tests and fixtures)."""
    clean = ImagePlane(rng.random((height, width, channels)))
    transmission = ImagePlane(rng.uniform(t_range[0], t_range[1], size=(height, width, 1)))
    ambient = tuple(float(v) for v in rng.random(channels))
    return HazeScene(clean=clean, transmission=transmission, ambient=ambient)
