"""Unit tests for datasets, augmentation, the optimizer and the training loop."""

import csv
import logging

import numpy as np
import pytest
from PIL import Image

from src.config import TrainConfig
from src.errors import DatasetError, OptimizerError, ShapeMismatchError
from src.image_core import ImagePlane
from src.network import NetConfig, ParamStore, identity_params, init_params
from src.training import (
    ACTING_LABEL,
    METRICS_HEADER,
    TRUE_LABEL,
    UNLABELED,
    OptimState,
    Sample,
    adam_step,
    apply_transform,
    augment,
    enhance_with,
    evaluate,
    load_dataset,
    lr_on_plateau,
    split_validation,
    synth_lowlight,
    train_supervised,
)


def _quick_config(**overrides):
    base = {"epochs": 2, "batch_size": 2, "network": NetConfig.linear(), "seed": 3}
    base.update(overrides)
    return TrainConfig(**base)


class TestSample:
    """Test cases for sample provenance rules."""

    def test_unlabeled_has_no_target(self, random_plane):
        """Test that an unlabeled sample cannot carry a target."""
        with pytest.raises(ValueError):
            Sample(random_plane, random_plane, UNLABELED, "a")

    def test_labeled_needs_target(self, random_plane):
        """Test that a true-label sample needs a target."""
        with pytest.raises(ValueError):
            Sample(random_plane, None, TRUE_LABEL, "a")

    def test_shapes_must_match(self, random_plane):
        """Test that input and target must be congruent."""
        with pytest.raises(ShapeMismatchError):
            Sample(random_plane, ImagePlane(np.zeros((4, 4, 3))), TRUE_LABEL, "a")

    def test_unlabeled_copy(self, labeled_samples):
        """Test dropping the target."""
        copy = labeled_samples[0].unlabeled()
        assert copy.provenance == UNLABELED
        assert copy.target is None
        assert copy.id == labeled_samples[0].id


class TestLoadDataset:
    """Test cases for dataset loading."""

    def test_pairing_rule(self, fixture_dataset):
        """Test that 4 pairs and 2 low-only files give 4 labeled + 2 unlabeled."""
        samples = load_dataset(fixture_dataset)
        assert len(samples) == 6
        assert sum(s.provenance == TRUE_LABEL for s in samples) == 4
        assert sum(s.provenance == UNLABELED for s in samples) == 2
        assert [s.id for s in samples] == sorted(s.id for s in samples)

    def test_mismatched_pair_rejected(self, fixture_dataset, caplog):
        """Test that a pair with different dimensions is dropped with a warning."""
        Image.new("RGB", (8, 8)).save(fixture_dataset / "high" / "img-0000.png")
        with caplog.at_level(logging.WARNING, logger="lowlight_haze"):
            samples = load_dataset(fixture_dataset)
        assert "img-0000" not in [s.id for s in samples]
        assert "Rejecting pair img-0000.png" in caplog.text

    def test_grayscale_expanded(self, tmp_path):
        """Test that single-channel files become three channels."""
        (tmp_path / "low").mkdir()
        Image.new("L", (6, 6), color=40).save(tmp_path / "low" / "a.png")
        samples = load_dataset(tmp_path)
        assert samples[0].low.channels == 3

    def test_empty_directory(self, tmp_path):
        """Test that a dataset without low-light images is refused."""
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

    def test_undecodable_file(self, tmp_path):
        """Test that broken images surface as dataset errors."""
        (tmp_path / "low").mkdir()
        (tmp_path / "low" / "bad.png").write_bytes(b"garbage")
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)


class TestSplitValidation:
    """Test cases for the validation split."""

    def _samples(self, count):
        plane = ImagePlane(np.zeros((4, 4, 3)))
        return [Sample(plane, plane, TRUE_LABEL, f"s{i:02d}") for i in range(count)]

    def test_fraction(self):
        """Test that ten percent of ten samples are held out."""
        train, validation = split_validation(self._samples(10), 0.1, seed=0)
        assert len(train) == 9 and len(validation) == 1
        assert not {s.id for s in train} & {s.id for s in validation}

    def test_at_least_one_held_out(self):
        """Test that a zero fraction still holds out one sample."""
        train, validation = split_validation(self._samples(3), 0.0, seed=0)
        assert len(validation) == 1 and len(train) == 2

    def test_single_sample(self):
        """Test that a single sample is used for both."""
        train, validation = split_validation(self._samples(1), 0.1, seed=0)
        assert [s.id for s in train] == [s.id for s in validation] == ["s00"]

    def test_deterministic(self):
        """Test that the split depends only on the seed."""
        first = split_validation(self._samples(10), 0.3, seed=4)
        second = split_validation(self._samples(10), 0.3, seed=4)
        assert [s.id for s in first[1]] == [s.id for s in second[1]]

    def test_ignores_unlabeled(self, random_plane):
        """Test that unlabeled samples never enter either split."""
        samples = self._samples(4) + [Sample(random_plane, None, UNLABELED, "u")]
        train, validation = split_validation(samples, 0.25, seed=0)
        assert "u" not in [s.id for s in train + validation]


class TestSynthLowlight:
    """Test cases for synthetic darkening."""

    def test_identity(self, random_plane):
        """Test that gamma 1 without noise is the identity."""
        np.testing.assert_array_equal(
            synth_lowlight(random_plane, 1.0, 0.0, seed=0).data, random_plane.data
        )

    def test_scalar(self):
        """Test 0.81 with gamma 2."""
        out = synth_lowlight(ImagePlane(np.array([[0.81]])), 2.0, 0.0, seed=0)
        assert out.data[0, 0, 0] == pytest.approx(0.6561, abs=1e-6)

    def test_noise_is_seeded(self, random_plane):
        """Test that the same seed gives the same noise."""
        a = synth_lowlight(random_plane, 2.0, 0.05, seed=7)
        b = synth_lowlight(random_plane, 2.0, 0.05, seed=7)
        c = synth_lowlight(random_plane, 2.0, 0.05, seed=8)
        np.testing.assert_array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_clamped(self, random_plane):
        """Test that noisy output stays in range."""
        out = synth_lowlight(random_plane, 2.0, 0.5, seed=1)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_rejects_brightening_gamma(self, random_plane):
        """Test that gamma below 1 is refused."""
        with pytest.raises(ValueError):
            synth_lowlight(random_plane, 0.5, 0.0, seed=0)


class TestAugment:
    """Test cases for dihedral augmentation."""

    def test_identity(self, labeled_samples):
        """Test that the identity branch returns the sample unchanged."""
        assert apply_transform(labeled_samples[0], "identity") is labeled_samples[0]

    def test_flip_involution(self, labeled_samples):
        """Test that flipping twice restores the sample."""
        sample = labeled_samples[0]
        twice = apply_transform(apply_transform(sample, "flip_h"), "flip_h")
        np.testing.assert_array_equal(twice.low.data, sample.low.data)
        np.testing.assert_array_equal(twice.target.data, sample.target.data)

    def test_rotations_compose(self, labeled_samples):
        """Test that rot90 followed by rot270 is the identity."""
        sample = labeled_samples[1]
        back = apply_transform(apply_transform(sample, "rot90"), "rot270")
        np.testing.assert_array_equal(back.low.data, sample.low.data)

    def test_input_and_target_move_together(self, labeled_samples):
        """Test that the same transform hits both images."""
        sample = labeled_samples[2]
        moved = apply_transform(sample, "flip_v")
        np.testing.assert_array_equal(moved.low.data, sample.low.data[::-1])
        np.testing.assert_array_equal(moved.target.data, sample.target.data[::-1])

    def test_seeded(self, labeled_samples):
        """Test that augmentation is a function of the seed."""
        a = augment(labeled_samples[0], 42)
        b = augment(labeled_samples[0], 42)
        np.testing.assert_array_equal(a.low.data, b.low.data)

    def test_unknown_transform(self, labeled_samples):
        """Test that unknown transforms are refused."""
        with pytest.raises(ValueError):
            apply_transform(labeled_samples[0], "shear")


class TestAdam:
    """Test cases for the Adam update."""

    def _store(self):
        return ParamStore({"w": np.zeros(3, dtype=np.float32)})

    def test_first_step_moves_by_lr(self):
        """Test that the bias-corrected first step is lr·sign(g)."""
        params = self._store()
        opt = OptimState.create(params, lr=1e-2)
        params.accumulate_grad("w", np.array([2.0, -0.5, 1e-3]))
        adam_step(params, opt)
        np.testing.assert_allclose(params["w"], [-1e-2, 1e-2, -1e-2], rtol=1e-4)
        assert not params.has_grad
        assert opt.step == 1

    def test_zero_gradient(self):
        """Test that a zero gradient on fresh moments leaves the parameters alone."""
        params = self._store()
        opt = OptimState.create(params, lr=1e-2)
        params.accumulate_grad("w", np.zeros(3))
        adam_step(params, opt)
        np.testing.assert_array_equal(params["w"], 0.0)
        np.testing.assert_array_equal(opt.m["w"], 0.0)

    def test_moments_decay(self):
        """Test that zero gradients shrink the first moment by beta1."""
        params = self._store()
        opt = OptimState.create(params, lr=1e-2)
        params.accumulate_grad("w", np.ones(3))
        adam_step(params, opt)
        before = opt.m["w"].copy()
        params.accumulate_grad("w", np.zeros(3))
        adam_step(params, opt)
        np.testing.assert_allclose(opt.m["w"], 0.9 * before)

    def test_empty_gradients(self):
        """Test that stepping without gradients is refused."""
        params = self._store()
        with pytest.raises(OptimizerError):
            adam_step(params, OptimState.create(params))


class TestPlateau:
    """Test cases for plateau-driven learning-rate decay."""

    def test_improving_history(self):
        """Test that steady improvement keeps the rate."""
        opt = OptimState.create(ParamStore(), lr=1e-3)
        assert not lr_on_plateau(opt, [0.1 * i for i in range(1, 9)], patience=5)
        assert opt.lr == 1e-3

    def test_flat_history_halves(self):
        """Test that a flat history of patience + 1 values halves the rate once."""
        opt = OptimState.create(ParamStore(), lr=1e-3)
        history = [0.5] * 6
        assert lr_on_plateau(opt, history, factor=0.5, patience=5)
        assert opt.lr == pytest.approx(5e-4)
        assert not lr_on_plateau(opt, history, factor=0.5, patience=5)
        assert opt.decay_count == 1

    def test_short_history(self):
        """Test that nothing happens before patience epochs."""
        opt = OptimState.create(ParamStore(), lr=1e-3)
        assert not lr_on_plateau(opt, [0.5] * 5, patience=5)

    def test_floor(self):
        """Test that the rate never drops below min_lr."""
        opt = OptimState.create(ParamStore(), lr=1.5e-6, min_lr=1e-6)
        lr_on_plateau(opt, [0.5] * 6, factor=0.5, patience=5)
        assert opt.lr == 1e-6

    def test_gain_below_min_delta(self):
        """Test that improvements smaller than min_delta count as a plateau."""
        opt = OptimState.create(ParamStore(), lr=1e-3)
        history = [0.5, 0.50001, 0.50002, 0.50003, 0.50004, 0.50005]
        assert lr_on_plateau(opt, history, patience=5, min_delta=1e-4)


class TestTrainSupervised:
    """Test cases for the minibatch training loop."""

    def test_zero_epochs_keeps_initialisation(self, labeled_samples):
        """Test that zero epochs leave the weights untouched."""
        config = _quick_config(epochs=0)
        report = train_supervised(labeled_samples, config)
        assert report.params.equals(init_params(config.network, seed=config.seed))
        assert report.epochs_run == 0
        assert len(report.val_ssim) == 1

    def test_batch_larger_than_dataset(self, labeled_samples):
        """Test that an oversized batch means one step per epoch."""
        config = _quick_config(batch_size=64, epochs=2)
        report = train_supervised(labeled_samples, config)
        assert report.opt.step == 2
        assert len(report.train_loss) == 2

    def test_steps_per_epoch(self, labeled_samples):
        """Test that three training samples in batches of two take two steps."""
        config = _quick_config(batch_size=2, epochs=1, validation_fraction=0.25)
        report = train_supervised(labeled_samples, config)
        assert report.opt.step == 2

    def test_parameters_change(self, labeled_samples):
        """Test that training moves the weights."""
        config = _quick_config(epochs=1)
        report = train_supervised(labeled_samples, config)
        assert not report.params.equals(init_params(config.network, seed=config.seed))

    def test_deterministic(self, labeled_samples):
        """Test that two identical runs give bit-identical weights."""
        config = _quick_config(epochs=2)
        first = train_supervised(labeled_samples, config)
        second = train_supervised(labeled_samples, config)
        assert first.params.equals(second.params)
        assert first.train_loss == second.train_loss

    def test_metrics_rows(self, tmp_path, labeled_samples):
        """Test the metrics CSV layout."""
        path = tmp_path / "metrics.csv"
        train_supervised(labeled_samples, _quick_config(epochs=2), metrics_path=path)
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == METRICS_HEADER
        assert [r[2] for r in rows[1:]] == ["val", "train", "val", "train", "val"]
        assert rows[2][4] == ""

    def test_acting_labels_train(self, labeled_samples):
        """Test that acting-label samples are used like true labels."""
        acting = [Sample(s.low, s.target, ACTING_LABEL, s.id) for s in labeled_samples]
        report = train_supervised(acting, _quick_config(epochs=1))
        assert report.opt.step >= 1

    def test_needs_labels(self, labeled_samples):
        """Test that an unlabeled-only set is refused."""
        with pytest.raises(DatasetError):
            train_supervised([s.unlabeled() for s in labeled_samples], _quick_config())

    def test_stop_after_decays(self, labeled_samples):
        """Test that a phase ends once the decay budget is spent."""
        config = _quick_config(epochs=30, lr_patience=1, min_delta=1.0, augment=False)
        report = train_supervised(labeled_samples, config, stop_after_decays=1)
        assert report.opt.decay_count == 1
        assert report.epochs_run == 2

    @pytest.mark.parametrize("mode", ["l1", "ssim"])
    def test_single_loss_modes(self, labeled_samples, mode):
        """Test that single-term modes train."""
        report = train_supervised(labeled_samples, _quick_config(epochs=1, loss_mode=mode))
        assert np.isfinite(report.train_loss[0])


class TestEvaluate:
    """Test cases for evaluation and inference."""

    def test_identity_network(self, labeled_samples):
        """Test that h ≡ 1 reproduces the input."""
        config = _quick_config()
        params = identity_params(config.network)
        low = labeled_samples[0].low
        np.testing.assert_allclose(enhance_with(params, low, config).data, low.data, atol=1e-7)

    def test_grayscale_input(self):
        """Test that single-channel input is enhanced as RGB."""
        config = _quick_config()
        low = ImagePlane(np.full((8, 8), 0.2))
        out = enhance_with(identity_params(config.network), low, config)
        assert out.channels == 3

    def test_perfect_prediction(self):
        """Test metrics when the target equals the identity output."""
        config = _quick_config()
        plane = ImagePlane(np.random.default_rng(0).uniform(0.1, 0.9, size=(12, 12, 3)))
        sample = Sample(plane, plane, TRUE_LABEL, "p")
        result = evaluate(identity_params(config.network), [sample], config)
        assert result.ssim == pytest.approx(1.0, abs=1e-6)
        assert result.psnr > 100.0
