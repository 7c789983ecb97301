"""
Training losses: L1, gamma brightness, smoothed-target and SSIM terms plus their weighted total.

Each term has a traced form (taking the prediction as a tape Var, so gradients flow
back into the network) and a plain form over ImagePlanes that returns a float.
The plain forms run the traced code on a throwaway tape, so both paths share one
implementation.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .image_core import (
    ImagePlane,
    down_up,
    gaussian_blur,
    gaussian_kernel1d,
    median_filter,
    require_congruent,
)
from .tape import Tape, Var, absolute, mean, power, relu, window_filter

logger = logging.getLogger("lowlight_haze.losses")

SMOOTHERS = ("gaussian", "median", "resample")
LOSS_TERMS = ("l1", "brightness", "smooth", "ssim")
LOSS_MODES = ("total",) + LOSS_TERMS


@dataclass(frozen=True)
class LossWeights:
    """Constants of the combined loss."""

    lambda1: float = 0.35
    lambda2: float = 0.5
    lambda3: float = 0.15
    gamma1: float = 0.85
    gamma2: float = 1.15
    smoother: str = "gaussian"
    smooth_sigma: float = 1.5
    smooth_radius: int = 3
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03

    def validate(self) -> None:
        """
        Validate weight values.

        Raises:
            ConfigError: If any value is out of range
        """
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"Invalid {name}: {getattr(self, name)} (must be >= 0)")
        for name in ("gamma1", "gamma2", "smooth_sigma", "ssim_sigma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"Invalid {name}: {getattr(self, name)} (must be > 0)")
        if self.smoother not in SMOOTHERS:
            raise ConfigError(f"Invalid smoother: {self.smoother} (choose from {SMOOTHERS})")
        if self.smooth_radius < 1:
            raise ConfigError(f"Invalid smooth_radius: {self.smooth_radius}")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ConfigError(f"Invalid ssim_window: {self.ssim_window} (must be odd and >= 3)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossValue:
    """Total loss with its per-term breakdown."""

    total: float
    l1: float
    brightness: float
    smooth: float
    ssim: float

    def as_row(self) -> list[float]:
        return [self.l1, self.brightness, self.smooth, self.ssim, self.total]


def _target(y_g: ImagePlane, like: Var) -> np.ndarray:
    if y_g.shape != like.shape:
        raise ShapeMismatchError(f"target {y_g.shape} and prediction {like.shape} differ")
    return y_g.data.astype(like.dtype)


def l1_term(y_g: ImagePlane, y_p: Var) -> Var:
    return mean(absolute(y_p - _target(y_g, y_p)))


def brightness_term(y_g: ImagePlane, y_p: Var, gamma1: float, gamma2: float) -> Var:
    brightened = np.power(np.maximum(_target(y_g, y_p).astype(np.float64), 0.0), gamma1)
    darkened = power(relu(y_p), gamma2)
    return mean(absolute(brightened - darkened))


def smooth_target(
    y_g: ImagePlane, smoother: str = "gaussian", sigma: float = 1.5, radius: int = 3
) -> ImagePlane:
    """Smoothed copy of the label; treated as a constant target."""
    if smoother == "gaussian":
        return gaussian_blur(y_g, sigma, radius)
    if smoother == "median":
        return median_filter(y_g, radius)
    if smoother == "resample":
        return down_up(y_g)
    raise ConfigError(f"Unknown smoother: {smoother}")


def smooth_term(
    y_g: ImagePlane, y_p: Var, smoother: str = "gaussian", sigma: float = 1.5, radius: int = 3
) -> Var:
    target = smooth_target(y_g, smoother, sigma, radius)
    return mean(absolute(_target(target, y_p) - y_p))


def ssim_window_taps(window: int, sigma: float) -> np.ndarray:
    return gaussian_kernel1d(sigma, window // 2)


def ssim_map(y_g: ImagePlane, y_p: Var, weights: LossWeights) -> Var:
    """
    Per-pixel SSIM between label and prediction on a Gaussian window.

    Dynamic range is 1. Images must exceed the window radius in both dimensions.
    """
    taps = ssim_window_taps(weights.ssim_window, weights.ssim_sigma)
    c1 = weights.ssim_k1**2
    c2 = weights.ssim_k2**2
    x = y_p.tape.constant(_target(y_g, y_p))
    y = y_p

    mu_x = window_filter(x, taps)
    mu_y = window_filter(y, taps)
    mu_xy = mu_x * mu_y
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    sigma_xx = window_filter(x * x, taps) - mu_xx
    sigma_yy = window_filter(y * y, taps) - mu_yy
    sigma_xy = window_filter(x * y, taps) - mu_xy

    numerator = (2.0 * mu_xy + c1) * (2.0 * sigma_xy + c2)
    denominator = (mu_xx + mu_yy + c1) * (sigma_xx + sigma_yy + c2)
    return numerator / denominator


def ssim_term(y_g: ImagePlane, y_p: Var, weights: LossWeights) -> Var:
    return 1.0 - mean(ssim_map(y_g, y_p, weights))


def total_traced(
    y_g: ImagePlane, y_p: Var, weights: LossWeights, mode: str = "total"
) -> tuple[Var, LossValue]:
    """
    Combined loss on the tape and its breakdown.

    ``mode`` selects either the full weighted sum or a single term at weight 1.0.
    Every component is computed (for logging) but only selected ones are traced
    into the returned total.
    """
    l1 = l1_term(y_g, y_p)
    brightness = brightness_term(y_g, y_p, weights.gamma1, weights.gamma2)
    smooth = smooth_term(y_g, y_p, weights.smoother, weights.smooth_sigma, weights.smooth_radius)
    ssim = ssim_term(y_g, y_p, weights)

    if mode == "total":
        loss = weights.lambda1 * l1 + weights.lambda2 * brightness + weights.lambda3 * smooth + ssim
    else:
        loss = {"l1": l1, "brightness": brightness, "smooth": smooth, "ssim": ssim}.get(mode)
        if loss is None:
            raise ConfigError(f"Unknown loss mode: {mode}")

    components = (float(l1.data), float(brightness.data), float(smooth.data), float(ssim.data))
    if mode == "total":
        total = (
            weights.lambda1 * components[0]
            + weights.lambda2 * components[1]
            + weights.lambda3 * components[2]
            + components[3]
        )
    else:
        total = float(loss.data)
    return loss, LossValue(total, *components)


def _evaluate(y_p: ImagePlane, dtype=np.float64) -> Var:
    return Tape(dtype).constant(y_p.data)


def l1_loss(y_g: ImagePlane, y_p: ImagePlane) -> float:
    """Mean absolute difference."""
    require_congruent(y_g, y_p)
    return float(l1_term(y_g, _evaluate(y_p)).data)


def brightness_loss(y_g: ImagePlane, y_p: ImagePlane, gamma1: float, gamma2: float) -> float:
    """Mean |y_g^gamma1 − max(y_p, 0)^gamma2|."""
    require_congruent(y_g, y_p)
    return float(brightness_term(y_g, _evaluate(y_p), gamma1, gamma2).data)


def smooth_loss(
    y_g: ImagePlane,
    y_p: ImagePlane,
    smoother: str = "gaussian",
    sigma: float = 1.5,
    radius: int = 3,
) -> float:
    """Mean |smooth(y_g) − y_p| with the chosen smoother."""
    require_congruent(y_g, y_p)
    return float(smooth_term(y_g, _evaluate(y_p), smoother, sigma, radius).data)


def ssim_loss(y_g: ImagePlane, y_p: ImagePlane, weights: LossWeights | None = None) -> float:
    """1 − mean SSIM."""
    require_congruent(y_g, y_p)
    return float(ssim_term(y_g, _evaluate(y_p), weights or LossWeights()).data)


def total_loss(y_g: ImagePlane, y_p: ImagePlane, weights: LossWeights | None = None) -> LossValue:
    """λ1·L1 + λ2·L_brightness + λ3·L_smooth + L_SSIM with its breakdown."""
    require_congruent(y_g, y_p)
    _, value = total_traced(y_g, _evaluate(y_p), weights or LossWeights())
    return value
