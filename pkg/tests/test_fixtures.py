"""Unit tests for the synthetic fixtures."""

import numpy as np
import pytest

from src.fixtures import (
    SCENE_RANGE,
    fixture_image,
    make_hazy,
    make_pair,
    make_scene,
    write_fixture_dataset,
    write_fixture_images,
)


class TestScenes:
    """Test cases for scene synthesis."""

    def test_range_and_shape(self):
        """Test scenes are RGB and span the configured range."""
        scene = make_scene(24, 20, seed=1)
        assert scene.shape == (24, 20, 3)
        assert scene.data.min() == pytest.approx(SCENE_RANGE[0], abs=1e-6)
        assert scene.data.max() == pytest.approx(SCENE_RANGE[1], abs=1e-6)

    def test_deterministic(self):
        """Test the same seed gives the same scene and another seed does not."""
        np.testing.assert_array_equal(make_scene(16, 16, 4).data, make_scene(16, 16, 4).data)
        assert not np.array_equal(make_scene(16, 16, 4).data, make_scene(16, 16, 5).data)

    def test_pair_is_darker(self, scene):
        """Test gamma darkening lowers every pixel without noise."""
        low, bright = make_pair(scene, gamma=2.5, noise_sigma=0.0, seed=0)
        assert bright is scene
        assert np.all(low.data <= scene.data)

    def test_hazy_is_brighter_on_average(self, scene):
        """Test near-white ambient light lifts the mean."""
        assert make_hazy(scene, seed=0).mean() > scene.mean()

    def test_unknown_kind(self):
        """Test an unknown fixture kind is rejected."""
        with pytest.raises(ValueError):
            fixture_image("foggy", 0, 16, 0, 2.5, 0.0)


class TestWriters:
    """Test cases for fixture writers."""

    def test_dataset_layout(self, fixture_dataset):
        """Test pairs get both halves and unpaired samples only low/."""
        assert len(list((fixture_dataset / "low").glob("*.png"))) == 6
        assert len(list((fixture_dataset / "high").glob("*.png"))) == 4

    def test_dataset_is_reproducible(self, tmp_path):
        """Test two writes with one seed give identical files."""
        for name in ("a", "b"):
            write_fixture_dataset(tmp_path / name, paired=2, size=16, seed=9)
        for sub in ("low", "high"):
            for path in (tmp_path / "a" / sub).glob("*.png"):
                assert path.read_bytes() == (tmp_path / "b" / sub / path.name).read_bytes()

    def test_kinds_share_scenes(self, tmp_path):
        """Test pristine and darkened images with the same index match by name."""
        pristine = write_fixture_images(tmp_path / "p", "pristine", count=2, size=16)
        darkened = write_fixture_images(tmp_path / "d", "darkened", count=2, size=16)
        assert [p.name for p in pristine] == [p.name for p in darkened]
