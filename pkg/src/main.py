"""Command-line entry point for the low-light enhancement engine."""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .analysis import compare_directories, write_histogram_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .config import LOG_LEVELS, TrainConfig, load_config
from .curriculum import run_semi_supervised
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    InsufficientPatchesError,
    ModelError,
    ParameterBudgetError,
)
from .fixtures import FIXTURE_KINDS, write_fixture_dataset, write_fixture_images
from .image_core import ImagePlane, load_image, save_image
from .iqa import NiqeModel, choose_patch_size, fit_niqe_model, niqe_score, psnr, ssim_metric
from .losses import LOSS_MODES
from .network import PRECISIONS, NetConfig, grad_check
from .training import enhance_with, load_dataset, split_validation, train_supervised
from .utils import IMAGE_SUFFIXES, list_images, setup_logging, write_csv

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_CHECKPOINT = 4
EXIT_MODEL = 5
EXIT_GRADCHECK = 6

EVALUATION_HEADER = ["image", "metric", "value"]

logger = None


def exit_code_for(error: BaseException) -> int:
    """Map an exception to its documented exit status."""
    if isinstance(error, ConfigError | ParameterBudgetError):
        return EXIT_CONFIG
    if isinstance(error, DatasetError):
        return EXIT_DATASET
    if isinstance(error, CheckpointError):
        return EXIT_CHECKPOINT
    if isinstance(error, ModelError | InsufficientPatchesError):
        return EXIT_MODEL
    return EXIT_FAILURE


def _train_config(args: argparse.Namespace) -> TrainConfig:
    if args.config is not None and not Path(args.config).is_file():
        raise ConfigError(f"--config: file not found: {args.config}")
    config = load_config(
        args.config,
        epochs=getattr(args, "epochs", None),
        seed=getattr(args, "seed", None),
        tau=getattr(args, "tau", None),
        max_rounds=getattr(args, "max_rounds", None),
        loss_mode=getattr(args, "loss", None),
        log_level=args.log_level,
    )
    if args.log_level is None and config.log_level != "INFO":
        setup_logging(config.log_level)
    return config


def _require_dir(path: Path, flag: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{flag}: directory not found: {path}")
    return path


def cmd_train(args: argparse.Namespace) -> int:
    """Supervised training on the paired samples of --data."""
    config = _train_config(args)
    samples = load_dataset(_require_dir(args.data, "--data"))
    out_dir = Path(args.out)

    logger.info("=" * 60)
    logger.info(f"Training ({config.loss_mode} loss, seed {config.seed})")
    logger.info("=" * 60)

    train, validation = split_validation(samples, config.validation_fraction, config.seed)
    if not train:
        raise DatasetError(f"No paired samples in {args.data}")
    metrics_path = out_dir / "metrics.csv"
    write_csv(metrics_path, ["round", "epoch", "split", "loss", "ssim", "psnr", "lr"], [])
    report = train_supervised(train, config, validation=validation, metrics_path=metrics_path)

    checkpoint = save_checkpoint(
        out_dir / "model.ckpt",
        report.params,
        config.network,
        seed=config.seed,
        metadata={
            "epochs": report.epochs_run,
            "loss_mode": config.loss_mode,
            "lr": report.opt.lr,
            "val_ssim": report.final_val_ssim,
            "val_psnr": report.final_val_psnr,
        },
    )
    logger.info(f"Checkpoint written to {checkpoint}")
    return EXIT_OK


def cmd_curriculum(args: argparse.Namespace) -> int:
    """NIQE-gated semi-supervised training."""
    config = _train_config(args)
    if args.labeled is not None:
        labeled = [s for s in load_dataset(_require_dir(args.labeled, "--labeled")) if s.labeled]
        pool = load_dataset(_require_dir(args.pool, "--pool")) if args.pool else []
    elif args.data is not None:
        samples = load_dataset(_require_dir(args.data, "--data"))
        labeled = [s for s in samples if s.labeled]
        pool = [s for s in samples if not s.labeled]
    else:
        raise ConfigError("curriculum needs --labeled (with optional --pool) or --data")
    if not labeled:
        raise DatasetError("No labeled samples for the curriculum")

    model = NiqeModel.load(args.model) if args.model else None
    report = run_semi_supervised(labeled, pool, config, Path(args.out), model=model)
    final = report.final
    logger.info(
        f"Final validation: SSIM {final.final_val_ssim:.4f}, PSNR {final.final_val_psnr:.2f} dB"
    )
    return EXIT_OK


def _input_images(inputs: list[str]) -> list[Path]:
    paths: list[Path] = []
    for entry in inputs:
        path = Path(entry)
        if path.is_dir():
            paths.extend(list_images(path))
        elif path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
            paths.append(path)
        else:
            raise DatasetError(f"--input: not a PNG file or directory: {entry}")
    if not paths:
        raise DatasetError("--input: no images found")
    return paths


def cmd_enhance(args: argparse.Namespace) -> int:
    """Enhance images with a trained checkpoint, printing per-image timing."""
    checkpoint_path = Path(args.checkpoint)
    if not checkpoint_path.is_file():
        raise CheckpointError(f"--checkpoint: file not found: {checkpoint_path}")
    checkpoint = load_checkpoint(checkpoint_path)
    config = TrainConfig(network=checkpoint.config)
    out_dir = Path(args.out)

    for path in _input_images(args.input):
        image = load_image(path)
        start = time.perf_counter()
        enhanced = enhance_with(checkpoint.params, image, config)
        elapsed = time.perf_counter() - start
        if image.channels == 1:
            enhanced = ImagePlane(enhanced.data[:, :, :1])
        save_image(enhanced, out_dir / path.name)
        print(f"{path.name}\t{elapsed * 1000.0:.1f} ms")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Per-image NIQE (and PSNR/SSIM against --reference) plus a mean row per metric."""
    paths = list_images(_require_dir(args.data, "--data"))
    if not paths:
        raise DatasetError(f"No images found in {args.data}")
    if args.model is None and args.reference is None:
        raise ConfigError("evaluate needs --model and/or --reference")
    model = NiqeModel.load(args.model) if args.model else None
    reference_dir = _require_dir(args.reference, "--reference") if args.reference else None

    metrics = (["niqe"] if model is not None else []) + (["psnr", "ssim"] if reference_dir else [])
    rows = []
    per_metric: dict[str, list[float]] = {m: [] for m in metrics}
    for path in paths:
        image = load_image(path)
        values = {}
        if model is not None:
            values["niqe"] = niqe_score(image, model).value
        if reference_dir is not None:
            ref_path = reference_dir / path.name
            if not ref_path.is_file():
                raise DatasetError(f"--reference: no counterpart for {path.name}")
            reference = load_image(ref_path)
            values["psnr"] = psnr(reference, image).value
            values["ssim"] = ssim_metric(reference, image).value
        for metric in metrics:
            rows.append([path.name, metric, values[metric]])
            per_metric[metric].append(values[metric])

    for metric in metrics:
        mean_value = float(np.mean(per_metric[metric]))
        rows.append(["mean", metric, mean_value])
        logger.info(f"mean {metric}: {mean_value:.4f}")
    out = write_csv(Path(args.out), EVALUATION_HEADER, rows)
    logger.info(f"Report written to {out}")
    return EXIT_OK


def cmd_histcompare(args: argparse.Namespace) -> int:
    """Average histograms of --data (inverted) and --reference, with their correlation."""
    comparison = compare_directories(
        _require_dir(args.data, "--data"),
        _require_dir(args.reference, "--reference"),
        bins=args.bins,
        invert_first=not args.no_invert,
    )
    out_dir = Path(args.out)
    write_histogram_csv(out_dir / "histogram_data.csv", comparison.first)
    write_histogram_csv(out_dir / "histogram_reference.csv", comparison.second)
    write_csv(
        out_dir / "correlation.csv",
        ["inverted", "bins", "correlation"],
        [[str(not args.no_invert).lower(), args.bins, comparison.correlation]],
    )
    print(f"correlation\t{comparison.correlation:.6f}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Finite-difference verification of the analytic gradients."""
    if args.trials < 1:
        raise ConfigError(f"--trials must be >= 1, got {args.trials}")
    if args.config is not None:
        network = _train_config(args).network
    elif args.linear:
        network = NetConfig.linear()
    else:
        network = NetConfig()
    report = grad_check(
        network,
        loss=args.loss,
        trials=args.trials,
        precision=args.precision,
        seed=args.seed or 0,
        corrupt=args.corrupt_gradient,
    )
    for name, error in report.errors.items():
        print(f"{name}\t{error:.3e}")
    if not report.passed:
        worst_name, worst_error = report.worst
        logger.error(
            f"Gradient check failed: worst {worst_name} relative error {worst_error:.3e} "
            f"(tolerance {report.tolerance:.0e})"
        )
        return EXIT_GRADCHECK
    logger.info("Gradient check passed")
    return EXIT_OK


def cmd_fit_niqe(args: argparse.Namespace) -> int:
    """Fit a NIQE model on the pristine images of --data (its high/ folder when present)."""
    data = _require_dir(args.data, "--data")
    if (data / "high").is_dir():
        data = data / "high"
    paths = list_images(data)
    if not paths:
        raise DatasetError(f"No images found in {data}")
    images = [load_image(p) for p in paths]
    patch = choose_patch_size(images, args.patch)
    model = fit_niqe_model(images, patch)
    model.save(Path(args.out))
    return EXIT_OK


def cmd_make_fixtures(args: argparse.Namespace) -> int:
    """Write deterministic synthetic fixtures."""
    if args.kind == "pairs":
        write_fixture_dataset(
            Path(args.out),
            paired=args.paired,
            unpaired=args.unpaired,
            size=args.size,
            seed=args.seed or 0,
        )
    else:
        write_fixture_images(
            Path(args.out),
            args.kind,
            count=args.paired,
            size=args.size,
            seed=args.seed or 0,
            gamma=args.gamma,
            start=args.start,
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--log-level",
        type=str.upper,
        choices=LOG_LEVELS,
        help="Logging level (overrides config)",
    )
    common.add_argument("--seed", type=int, help="Run seed (overrides config)")

    parser = argparse.ArgumentParser(
        prog="lowlight-haze",
        description="Low-light image enhancement through the inverted haze model",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Generate a fixture dataset and train on it
  python -m src.main make-fixtures --out fixtures/ --paired 30
  python -m src.main train --data fixtures/ --out run1/

  # Enhance a folder with the trained checkpoint
  python -m src.main enhance --checkpoint run1/model.ckpt --input photos/ --out enhanced/

  # Verify gradients in double precision
  python -m src.main gradcheck --precision double --trials 3
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common], help="Supervised training")
    train.add_argument("--config", type=str, help="JSON training config")
    train.add_argument("--data", type=str, required=True, help="Dataset with low/ and high/")
    train.add_argument("--out", type=str, required=True, help="Run directory")
    train.add_argument("--epochs", type=int, help="Epoch budget (overrides config)")
    train.add_argument("--loss", choices=LOSS_MODES, help="Loss selector (overrides config)")
    train.set_defaults(handler=cmd_train)

    curriculum = sub.add_parser("curriculum", parents=[common], help="Semi-supervised curriculum")
    curriculum.add_argument("--config", type=str, help="JSON training config")
    curriculum.add_argument("--labeled", type=str, help="Dataset holding the labeled pairs")
    curriculum.add_argument("--pool", type=str, help="Dataset holding the unlabeled pool")
    curriculum.add_argument("--data", type=str, help="Single dataset: pairs labeled, rest pool")
    curriculum.add_argument("--out", type=str, required=True, help="Run directory")
    curriculum.add_argument("--model", type=str, help="Pre-fitted NIQE model JSON")
    curriculum.add_argument("--tau", type=float, help="Admission margin above N_a (inf allowed)")
    curriculum.add_argument("--epochs", type=int, help="Epoch budget per phase")
    curriculum.add_argument("--max-rounds", type=int, help="Maximum curriculum rounds")
    curriculum.add_argument("--loss", choices=LOSS_MODES, help="Loss selector")
    curriculum.set_defaults(handler=cmd_curriculum)

    enhance = sub.add_parser("enhance", parents=[common], help="Enhance images")
    enhance.add_argument("--checkpoint", type=str, required=True, help="Checkpoint manifest")
    enhance.add_argument("--input", type=str, nargs="+", required=True, help="PNG files or dirs")
    enhance.add_argument("--out", type=str, required=True, help="Output directory")
    enhance.set_defaults(handler=cmd_enhance)

    evaluate = sub.add_parser("evaluate", parents=[common], help="Quality report")
    evaluate.add_argument("--data", type=str, required=True, help="Images to score")
    evaluate.add_argument("--reference", type=str, help="Reference images (same file names)")
    evaluate.add_argument("--model", type=str, help="NIQE model JSON")
    evaluate.add_argument("--out", type=str, required=True, help="CSV report path")
    evaluate.set_defaults(handler=cmd_evaluate)

    hist = sub.add_parser("histcompare", parents=[common], help="Histogram comparison")
    hist.add_argument("--data", type=str, required=True, help="Low-light images (inverted)")
    hist.add_argument("--reference", type=str, required=True, help="Hazy images")
    hist.add_argument("--bins", type=int, default=256, help="Histogram bins")
    hist.add_argument("--no-invert", action="store_true", help="Do not invert --data")
    hist.add_argument("--out", type=str, required=True, help="Output directory")
    hist.set_defaults(handler=cmd_histcompare)

    grad = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient check")
    grad.add_argument("--config", type=str, help="JSON config providing the network layout")
    grad.add_argument("--loss", choices=LOSS_MODES, default="total", help="Loss selector")
    grad.add_argument("--trials", type=int, default=20, help="Random instances (>= 1)")
    grad.add_argument("--precision", choices=sorted(PRECISIONS), default="single")
    grad.add_argument("--linear", action="store_true", help="Check a single-layer network")
    grad.add_argument(
        "--corrupt-gradient",
        action="store_true",
        help="Perturb one analytic gradient (the check must fail)",
    )
    grad.set_defaults(handler=cmd_gradcheck)

    fit = sub.add_parser("fit-niqe", parents=[common], help="Fit a NIQE model")
    fit.add_argument("--data", type=str, required=True, help="Pristine images")
    fit.add_argument("--out", type=str, required=True, help="Model JSON path")
    fit.add_argument("--patch", type=int, default=48, help="Preferred patch size")
    fit.set_defaults(handler=cmd_fit_niqe)

    fixtures = sub.add_parser("make-fixtures", parents=[common], help="Write synthetic fixtures")
    fixtures.add_argument("--out", type=str, required=True, help="Output directory")
    fixtures.add_argument("--kind", choices=FIXTURE_KINDS, default="pairs")
    fixtures.add_argument("--paired", type=int, default=30, help="Paired samples (or image count)")
    fixtures.add_argument("--unpaired", type=int, default=0, help="Low-only samples")
    fixtures.add_argument("--size", type=int, default=64, help="Image side length")
    fixtures.add_argument("--gamma", type=float, default=2.5, help="Gamma for --kind darkened")
    fixtures.add_argument("--start", type=int, default=0, help="First image index")
    fixtures.set_defaults(handler=cmd_make_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    """
    Main entry point for the application.

    Returns:
        Exit code (0 ok, 2 config, 3 dataset, 4 checkpoint, 5 model, 6 gradcheck, 1 other)
    """
    global logger

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logger = setup_logging(args.log_level or "INFO")

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.info("\nInterrupted by user")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Fatal error: {e}")
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
