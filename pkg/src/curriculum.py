"""
NIQE-gated semi-supervised curriculum.

After pretraining on the labeled subset, every round enhances the unlabeled pool,
scores the responses with NIQE and admits those that score no worse than the mean
NIQE of the true labels (N_a) plus a margin τ. Admitted responses become frozen
acting labels and the network is retrained on labeled ∪ admitted.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import TrainConfig
from .errors import DatasetError, InsufficientPatchesError
from .iqa import NiqeModel, choose_patch_size, fit_niqe_model, niqe_score
from .network import ParamStore, init_params
from .training import (
    ACTING_LABEL,
    METRICS_HEADER,
    OptimState,
    Sample,
    TrainingReport,
    enhance_with,
    split_validation,
    train_supervised,
)
from .utils import ensure_directory_exists, write_csv

logger = logging.getLogger("lowlight_haze.curriculum")

CURRICULUM_HEADER = ["round", "labeled", "acting", "pool", "admitted", "n_a", "tau"]


@dataclass(frozen=True)
class RoundRecord:
    round: int
    labeled: int
    acting: int
    pool: int
    admitted: int
    n_a: float
    tau: float

    def as_row(self) -> list:
        return [self.round, self.labeled, self.acting, self.pool, self.admitted, self.n_a, self.tau]


@dataclass(frozen=True)
class CurriculumState:
    """
    Partition of the sample universe at a round boundary.

    ``labeled`` holds true-label training samples, ``admitted`` the frozen acting
    labels and ``pool`` the still-unlabeled samples. The three never overlap.
    """

    labeled: tuple[Sample, ...]
    pool: tuple[Sample, ...]
    n_a: float
    tau: float
    admitted: tuple[Sample, ...] = ()
    round: int = 0
    last_admitted: int = 0
    pool_exhausted: bool = False
    scores: dict[str, float] = field(default_factory=dict)

    @property
    def training_set(self) -> list[Sample]:
        return list(self.labeled) + list(self.admitted)

    def record(self) -> RoundRecord:
        return RoundRecord(
            round=self.round,
            labeled=len(self.labeled),
            acting=len(self.admitted),
            pool=len(self.pool),
            admitted=self.last_admitted,
            n_a=self.n_a,
            tau=self.tau,
        )


@dataclass
class CurriculumReport:
    params: ParamStore
    state: CurriculumState
    pretrain: TrainingReport
    rounds: list[RoundRecord] = field(default_factory=list)
    round_reports: list[TrainingReport] = field(default_factory=list)
    model: NiqeModel | None = None

    @property
    def final(self) -> TrainingReport:
        return self.round_reports[-1] if self.round_reports else self.pretrain


def mean_niqe(images, model: NiqeModel) -> float:
    """Average NIQE over a set of images."""
    return float(np.mean([niqe_score(img, model).value for img in images]))


def curriculum_round(
    state: CurriculumState,
    params: ParamStore,
    config: TrainConfig,
    model: NiqeModel,
) -> CurriculumState:
    """
    Score the pool's network responses and admit those with NIQE ≤ N_a + τ.

    Responses that cannot be scored get an infinite score. An empty pool returns
    the state unchanged with ``pool_exhausted`` set.

    Returns:
        New state with the round counter incremented
    """
    if not state.pool:
        logger.info("Pool is empty; nothing to admit")
        return replace(state, pool_exhausted=True, last_admitted=0)

    threshold = state.n_a + state.tau
    admitted, remaining, scores = [], [], {}
    for sample in sorted(state.pool, key=lambda s: s.id):
        response = enhance_with(params, sample.low, config)
        try:
            score = niqe_score(response, model).value
        except InsufficientPatchesError as e:
            logger.warning(f"Response for {sample.id} cannot be scored: {e}")
            score = math.inf
        scores[sample.id] = score
        if score <= threshold:
            admitted.append(Sample(sample.low, response, ACTING_LABEL, sample.id))
        else:
            remaining.append(sample)

    logger.info(
        f"Round {state.round + 1}: admitted {len(admitted)} of {len(state.pool)} "
        f"(threshold {threshold:.3f})"
    )
    return replace(
        state,
        admitted=state.admitted + tuple(admitted),
        pool=tuple(remaining),
        round=state.round + 1,
        last_admitted=len(admitted),
        pool_exhausted=not remaining,
        scores=scores,
    )


def run_semi_supervised(
    labeled: Sequence[Sample],
    pool: Sequence[Sample],
    config: TrainConfig,
    out_dir: Path | None = None,
    model: NiqeModel | None = None,
) -> CurriculumReport:
    """
    Pretrain on the labeled set, then run up to ``max_rounds`` curriculum rounds.

    The validation split is drawn once from the labeled samples and held fixed.
    Each phase ends after ``pretrain_decays`` learning-rate decays or when the
    epoch budget runs out; retraining continues from the previous weights. With an
    empty pool the run is the plain supervised run over the full epoch budget.

    Args:
        labeled: True-label samples
        pool: Unlabeled samples (targets, if any, are ignored)
        config: Training configuration
        out_dir: Run directory for checkpoints and CSV reports
        model: NIQE model; fitted on the labeled targets when omitted

    Returns:
        CurriculumReport with per-round records and training curves

    Raises:
        DatasetError: If no labeled sample is given
    """
    labeled = [s for s in labeled if s.labeled]
    if not labeled:
        raise DatasetError("Curriculum needs at least one labeled sample")
    pool = [s.unlabeled() if s.labeled else s for s in pool]

    metrics_path = None
    checkpoint_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        checkpoint_dir = out_dir / "checkpoints"
        ensure_directory_exists(checkpoint_dir)
        metrics_path = write_csv(out_dir / "logs" / "metrics.csv", METRICS_HEADER, [])

    train, validation = split_validation(labeled, config.validation_fraction, config.seed)

    n_a = math.nan
    if pool:
        if model is None:
            targets = [s.target for s in labeled]
            model = fit_niqe_model(targets, choose_patch_size(targets, config.niqe_patch_size))
        # true labels only; acting labels never contribute
        n_a = mean_niqe([s.target for s in labeled], model)
        logger.info(f"N_a = {n_a:.4f} over {len(labeled)} true labels")

    logger.info("=" * 60)
    logger.info("Pretraining on the labeled subset")
    logger.info("=" * 60)
    params = init_params(config.network, seed=config.seed)
    opt = OptimState.create(params, config.learning_rate, config.min_lr)
    # without a pool this is exactly the supervised run of the train command
    pretrain = train_supervised(
        train,
        config,
        params,
        opt,
        validation=validation,
        round_index=0,
        metrics_path=metrics_path,
        stop_after_decays=config.pretrain_decays if pool else None,
    )
    if checkpoint_dir is not None:
        _save_round(checkpoint_dir, 0, params, config, pretrain)

    state = CurriculumState(labeled=tuple(train), pool=tuple(pool), n_a=n_a, tau=config.tau)
    report = CurriculumReport(params=params, state=state, pretrain=pretrain, model=model)

    for _ in range(config.max_rounds):
        if not state.pool:
            break
        logger.info("=" * 60)
        logger.info(f"Curriculum round {state.round + 1}")
        logger.info("=" * 60)
        state = curriculum_round(state, params, config, model)
        record = state.record()
        report.rounds.append(record)
        if state.last_admitted == 0:
            logger.info("No response passed the NIQE gate; stopping")
            break
        phase = train_supervised(
            state.training_set,
            config,
            params,
            opt,
            validation=validation,
            round_index=state.round,
            metrics_path=metrics_path,
            stop_after_decays=config.pretrain_decays,
        )
        report.round_reports.append(phase)
        if checkpoint_dir is not None:
            _save_round(checkpoint_dir, state.round, params, config, phase)

    report.state = state
    if out_dir is not None:
        rows = [r.as_row() for r in report.rounds]
        write_csv(out_dir / "curriculum.csv", CURRICULUM_HEADER, rows)
    logger.info(
        f"Curriculum finished after {len(report.rounds)} rounds: {len(state.labeled)} labeled, "
        f"{len(state.admitted)} acting, {len(state.pool)} left in pool"
    )
    return report


def _save_round(
    checkpoint_dir: Path,
    round_index: int,
    params: ParamStore,
    config: TrainConfig,
    phase: TrainingReport,
) -> Path:
    return save_checkpoint(
        checkpoint_dir / f"round-{round_index}.ckpt",
        params,
        config.network,
        seed=config.seed,
        metadata={
            "round": round_index,
            "epochs": phase.epochs_run,
            "lr": phase.opt.lr,
            "val_ssim": phase.final_val_ssim,
            "val_psnr": phase.final_val_psnr,
        },
    )
