"""
Supervised training: dataset loading, synthetic darkening, augmentation, Adam with
plateau-driven learning-rate decay, and the minibatch loop.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import DatasetError, ImageDecodeError, OptimizerError, ShapeMismatchError
from .haze_model import AtmosphericMap, enhance, enhance_traced
from .image_core import ImagePlane, invert, load_image
from .iqa import psnr, ssim_metric
from .losses import LossValue, total_traced
from .network import ParamStore, backward, forward, init_params
from .utils import append_csv, list_images, make_rng

logger = logging.getLogger("lowlight_haze.training")

TRUE_LABEL = "true-label"
ACTING_LABEL = "acting-label"
UNLABELED = "unlabeled"
PROVENANCES = (TRUE_LABEL, ACTING_LABEL, UNLABELED)

METRICS_HEADER = ["round", "epoch", "split", "loss", "ssim", "psnr", "lr"]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# identity, horizontal flip, vertical flip, rotations by 90/180/270 degrees
TRANSFORMS = ("identity", "flip_h", "flip_v", "rot90", "rot180", "rot270")


@dataclass(frozen=True)
class Sample:
    """A low-light image with an optional target and where that target came from."""

    low: ImagePlane
    target: ImagePlane | None
    provenance: str
    id: str

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValueError(f"Unknown provenance: {self.provenance}")
        if (self.provenance == UNLABELED) != (self.target is None):
            raise ValueError(
                f"Sample {self.id}: provenance {self.provenance} "
                f"with target={self.target is not None}"
            )
        if self.target is not None and self.target.shape != self.low.shape:
            raise ShapeMismatchError(
                f"Sample {self.id}: low {self.low.shape} and target {self.target.shape} differ"
            )

    @property
    def labeled(self) -> bool:
        return self.target is not None

    def unlabeled(self) -> "Sample":
        """The same input with its target dropped."""
        return Sample(self.low, None, UNLABELED, self.id)


def _as_rgb(img: ImagePlane) -> ImagePlane:
    if img.channels == 3:
        return img
    return ImagePlane(np.repeat(img.data, 3, axis=2))


def load_dataset(directory: Path) -> list[Sample]:
    """
    Load ``low/`` images, pairing each with ``high/<same name>`` when present.

    Grayscale files are expanded to three channels. Pairs whose dimensions differ
    are rejected with a warning.

    Args:
        directory: Dataset root

    Returns:
        Samples ordered by file name

    Raises:
        DatasetError: If there are no low-light images or a file cannot be decoded
    """
    directory = Path(directory)
    low_dir = directory / "low"
    high_dir = directory / "high"
    low_files = list_images(low_dir)
    if not low_files:
        raise DatasetError(f"No low-light images found in {low_dir}")

    samples = []
    for low_path in low_files:
        high_path = high_dir / low_path.name
        try:
            low = _as_rgb(load_image(low_path))
            target = _as_rgb(load_image(high_path)) if high_path.is_file() else None
        except ImageDecodeError as e:
            raise DatasetError(f"Cannot read dataset image: {e}") from e
        if target is not None and target.shape != low.shape:
            logger.warning(
                f"Rejecting pair {low_path.name}: low {low.shape[:2]} vs high {target.shape[:2]}"
            )
            continue
        provenance = TRUE_LABEL if target is not None else UNLABELED
        samples.append(Sample(low, target, provenance, low_path.stem))

    if not samples:
        raise DatasetError(f"Every pair in {directory} was rejected")
    labeled = sum(1 for s in samples if s.labeled)
    logger.info(f"Loaded {len(samples)} samples from {directory} ({labeled} labeled)")
    return samples


def split_validation(
    samples: Sequence[Sample], fraction: float, seed: int
) -> tuple[list[Sample], list[Sample]]:
    """
    Seeded train/validation split of the labeled samples.

    ``max(1, round(fraction · n))`` samples are held out when n ≥ 2. A single
    labeled sample serves as both training and validation set.

    Returns:
        (train, validation), each in id order
    """
    labeled = sorted((s for s in samples if s.labeled), key=lambda s: s.id)
    if len(labeled) < 2:
        return list(labeled), list(labeled)
    count = min(max(1, round(fraction * len(labeled))), len(labeled) - 1)
    order = make_rng(seed, "split").permutation(len(labeled))
    held = set(int(i) for i in order[:count])
    train = [s for i, s in enumerate(labeled) if i not in held]
    validation = [s for i, s in enumerate(labeled) if i in held]
    return train, validation


def synth_lowlight(bright: ImagePlane, gamma: float, noise_sigma: float, seed: int) -> ImagePlane:
    """
    Darken an image: clamp(bright^gamma + N(0, noise_sigma)).

    Raises:
        ValueError: If gamma < 1 or noise_sigma < 0
    """
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    darkened = np.power(bright.data.astype(np.float64), gamma)
    if noise_sigma > 0:
        darkened = darkened + make_rng(seed, "noise").normal(0.0, noise_sigma, size=darkened.shape)
    return ImagePlane(np.clip(darkened, 0.0, 1.0))


def _transform(data: np.ndarray, name: str) -> np.ndarray:
    if name == "flip_h":
        return data[:, ::-1]
    if name == "flip_v":
        return data[::-1]
    if name == "rot90":
        return np.rot90(data, 1, axes=(0, 1))
    if name == "rot180":
        return np.rot90(data, 2, axes=(0, 1))
    if name == "rot270":
        return np.rot90(data, 3, axes=(0, 1))
    return data


def apply_transform(sample: Sample, name: str) -> Sample:
    """Apply one dihedral transform identically to input and target."""
    if name not in TRANSFORMS:
        raise ValueError(f"Unknown transform: {name}")
    if name == "identity":
        return sample
    low = ImagePlane(_transform(sample.low.data, name))
    target = None if sample.target is None else ImagePlane(_transform(sample.target.data, name))
    return replace(sample, low=low, target=target)


def augment(sample: Sample, seed: int) -> Sample:
    """Pick one of the six dihedral transforms deterministically from the seed."""
    choice = int(make_rng(seed, "augment").integers(len(TRANSFORMS)))
    return apply_transform(sample, TRANSFORMS[choice])


@dataclass
class OptimState:
    """Adam moments plus the learning-rate schedule bookkeeping."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    lr: float
    initial_lr: float
    min_lr: float
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    last_decay_at: int = 0
    decay_count: int = 0

    @classmethod
    def create(cls, params: ParamStore, lr: float = 1e-4, min_lr: float = 1e-6) -> "OptimState":
        return cls(
            m={name: np.zeros(value.shape) for name, value in params.items()},
            v={name: np.zeros(value.shape) for name, value in params.items()},
            lr=lr,
            initial_lr=lr,
            min_lr=min_lr,
        )


def adam_step(params: ParamStore, opt: OptimState) -> None:
    """
    One bias-corrected Adam update; gradients are cleared afterwards.

    Raises:
        OptimizerError: If no gradients were accumulated since the last step
    """
    if not params.has_grad:
        raise OptimizerError("adam_step called with empty gradients")
    opt.step += 1
    correction1 = 1.0 - opt.beta1**opt.step
    correction2 = 1.0 - opt.beta2**opt.step
    for name, value in params.items():
        grad = params.grad(name)
        opt.m[name] = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * grad
        opt.v[name] = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * grad * grad
        m_hat = opt.m[name] / correction1
        v_hat = opt.v[name] / correction2
        update = opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
        params[name] = value.astype(np.float64) - update
    params.zero_grad()


def lr_on_plateau(
    opt: OptimState,
    val_ssim_history: Sequence[float],
    factor: float = 0.5,
    patience: int = 5,
    min_delta: float = 1e-4,
) -> bool:
    """
    Decay the learning rate when validation SSIM stalls.

    The rule fires when more than ``patience`` epochs passed since the last decay
    and none of the last ``patience`` values beat the best earlier value by
    ``min_delta``. The rate never drops below ``opt.min_lr``.

    Returns:
        True when a plateau was detected on this call
    """
    epochs = len(val_ssim_history)
    if epochs == 0 or epochs - opt.last_decay_at <= patience:
        return False
    best_before = max(val_ssim_history[:-patience])
    recent_best = max(val_ssim_history[-patience:])
    if recent_best >= best_before + min_delta:
        return False
    previous = opt.lr
    opt.lr = max(opt.lr * factor, opt.min_lr)
    opt.last_decay_at = epochs
    opt.decay_count += 1
    logger.info(f"Validation SSIM plateau: lr {previous:.3g} -> {opt.lr:.3g}")
    return True


@dataclass
class TrainingReport:
    """Curves and final state of one training phase."""

    params: ParamStore
    opt: OptimState
    round_index: int = 0
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_ssim: list[float] = field(default_factory=list)
    val_psnr: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    rows: list[list] = field(default_factory=list)
    epochs_run: int = 0

    @property
    def final_val_ssim(self) -> float:
        return self.val_ssim[-1]

    @property
    def final_val_psnr(self) -> float:
        return self.val_psnr[-1]


@dataclass(frozen=True)
class Evaluation:
    loss: float
    ssim: float
    psnr: float


def enhance_with(
    params: ParamStore, low: ImagePlane, config: TrainConfig | None = None
) -> ImagePlane:
    """Run the full invert → estimate h → solve → re-invert chain, clamped."""
    network = config.network if config is not None else None
    result = forward(params, invert(_as_rgb(low)), network)
    return enhance(_as_rgb(low), AtmosphericMap(result.h.data.astype(np.float64), result.c))


def _sample_loss(params: ParamStore, sample: Sample, config: TrainConfig):
    result = forward(params, invert(sample.low), config.network)
    prediction = enhance_traced(sample.low, result.h, result.c)
    value, breakdown = total_traced(
        sample.target, prediction, config.loss_weights, mode=config.loss_mode
    )
    return value, breakdown, result


def evaluate(params: ParamStore, samples: Sequence[Sample], config: TrainConfig) -> Evaluation:
    """Mean loss, SSIM and PSNR of the clamped enhanced outputs against their targets."""
    losses, ssims, psnrs = [], [], []
    for sample in samples:
        _, breakdown, result = _sample_loss(params, sample, config)
        enhanced = enhance(sample.low, AtmosphericMap(result.h.data.astype(np.float64), result.c))
        losses.append(_mode_value(breakdown, config.loss_mode))
        ssims.append(ssim_metric(sample.target, enhanced, config.loss_weights).value)
        psnrs.append(psnr(sample.target, enhanced).value)
    return Evaluation(float(np.mean(losses)), float(np.mean(ssims)), float(np.mean(psnrs)))


def _mode_value(breakdown: LossValue, mode: str) -> float:
    return breakdown.total if mode == "total" else getattr(breakdown, mode)


def train_supervised(
    samples: Sequence[Sample],
    config: TrainConfig,
    params: ParamStore | None = None,
    opt: OptimState | None = None,
    validation: Sequence[Sample] | None = None,
    round_index: int = 0,
    metrics_path: Path | None = None,
    stop_after_decays: int | None = None,
) -> TrainingReport:
    """
    Minibatch training on labeled and acting-label samples.

    Each step runs invert → forward → solve → re-invert → loss → backward over the
    batch (gradients scaled by 1/batch) and then one Adam update. Validation SSIM
    and PSNR are recorded before the first epoch and after every epoch.

    Args:
        samples: Training samples; unlabeled ones are ignored
        config: Training configuration
        params: Weights to continue from (initialised from config.seed when omitted)
        opt: Optimizer state to continue from
        validation: Held-out samples; split from ``samples`` when omitted
        round_index: Curriculum round recorded in the metrics rows
        metrics_path: CSV file the metrics rows are appended to
        stop_after_decays: End the phase after this many learning-rate decays

    Returns:
        TrainingReport with per-epoch curves

    Raises:
        DatasetError: If no sample has a target
    """
    labeled = [s for s in samples if s.labeled]
    if not labeled:
        raise DatasetError("Training needs at least one labeled sample")
    if validation is None:
        labeled, validation = split_validation(labeled, config.validation_fraction, config.seed)
    validation = list(validation)

    if params is None:
        params = init_params(config.network, seed=config.seed)
    if opt is None:
        opt = OptimState.create(params, config.learning_rate, config.min_lr)
    opt.last_decay_at = 0
    decays_at_start = opt.decay_count

    report = TrainingReport(params=params, opt=opt, round_index=round_index)
    shuffle_rng = make_rng(config.seed, f"shuffle-{round_index}")
    augment_rng = make_rng(config.seed, f"augment-{round_index}")

    def record_validation(epoch: int) -> None:
        result = evaluate(params, validation, config)
        report.val_loss.append(result.loss)
        report.val_ssim.append(result.ssim)
        report.val_psnr.append(result.psnr)
        report.rows.append(
            [round_index, epoch, "val", result.loss, result.ssim, result.psnr, opt.lr]
        )

    record_validation(0)
    val_history: list[float] = []
    logger.info(
        f"Round {round_index}: training on {len(labeled)} samples, "
        f"validating on {len(validation)}, up to {config.epochs} epochs"
    )

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(labeled))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [labeled[int(i)] for i in order[start : start + config.batch_size]]
            for sample in batch:
                if config.augment:
                    sample = augment(sample, int(augment_rng.integers(2**31)))
                value, breakdown, result = _sample_loss(params, sample, config)
                backward(params, result.tape, value, loss_grad=1.0 / len(batch))
                epoch_losses.append(float(value.data))
                logger.debug(
                    f"{sample.id}: l1={breakdown.l1:.5f} brightness={breakdown.brightness:.5f} "
                    f"smooth={breakdown.smooth:.5f} ssim={breakdown.ssim:.5f}"
                )
            adam_step(params, opt)

        train_loss = float(np.mean(epoch_losses))
        report.train_loss.append(train_loss)
        report.lr.append(opt.lr)
        report.rows.append([round_index, epoch, "train", train_loss, "", "", opt.lr])
        record_validation(epoch)
        report.epochs_run = epoch
        val_history.append(report.val_ssim[-1])

        logger.info(
            f"Round {round_index} epoch {epoch}: loss={train_loss:.5f} "
            f"val_ssim={report.val_ssim[-1]:.4f} val_psnr={report.val_psnr[-1]:.2f} lr={opt.lr:.3g}"
        )
        lr_on_plateau(
            opt, val_history, config.lr_decay_factor, config.lr_patience, config.min_delta
        )
        if stop_after_decays is not None and opt.decay_count - decays_at_start >= stop_after_decays:
            logger.info(
                f"Round {round_index}: stopping after {stop_after_decays} learning-rate decays"
            )
            break

    if metrics_path is not None:
        append_csv(Path(metrics_path), METRICS_HEADER, report.rows)
    return report
