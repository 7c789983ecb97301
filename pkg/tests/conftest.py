"""Shared fixtures: small deterministic images, datasets and a gradient oracle."""

import numpy as np
import pytest

from src.fixtures import make_scene, write_fixture_dataset
from src.image_core import ImagePlane
from src.network import central_difference, relative_error
from src.tape import Tape
from src.training import TRUE_LABEL, Sample, synth_lowlight


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scene():
    """A 32×32 bright RGB scene."""
    return make_scene(32, 32, seed=3)


@pytest.fixture
def random_plane(rng):
    """Random 8×8×3 plane in [0, 1]."""
    return ImagePlane(rng.random((8, 8, 3)))


@pytest.fixture
def labeled_samples():
    """Four 16×16 true-label samples."""
    samples = []
    for index in range(4):
        bright = make_scene(16, 16, seed=100 + index)
        low = synth_lowlight(bright, 2.5, 0.0, seed=index)
        samples.append(Sample(low, bright, TRUE_LABEL, f"img-{index:04d}"))
    return samples


@pytest.fixture
def fixture_dataset(tmp_path):
    """Dataset directory with 4 pairs and 2 low-only images of 16×16."""
    root = tmp_path / "dataset"
    write_fixture_dataset(root, paired=4, unpaired=2, size=16, seed=5)
    return root


@pytest.fixture
def gradient_error():
    """
    Worst relative error of float32 tape gradients against float64 central differences.

    ``build`` maps tape Vars to a scalar Var. The finite differences use step 1e-3
    and replay the analytic pass's relu/abs signs. ``samples`` limits the check to
    that many seeded entries per array.
    """

    def measure(build, *arrays, step=1e-3, samples=None):
        arrays = [np.asarray(a, dtype=np.float32) for a in arrays]
        tape = Tape(np.float32)
        leaves = [tape.variable(a) for a in arrays]
        tape.backward(build(*leaves))

        worst = 0.0
        for position, leaf in enumerate(leaves):

            def evaluate(candidate, position=position):
                replay = Tape(np.float64, kinks=tape.kinks)
                args = [replay.constant(a) for a in arrays]
                args[position] = replay.constant(candidate)
                return build(*args).item()

            point = arrays[position]
            entries = np.arange(point.size)
            if samples is not None and samples < point.size:
                picks = np.random.default_rng(position).choice(point.size, samples, replace=False)
                entries = np.sort(picks)
            numeric = central_difference(evaluate, point, entries, step)
            worst = max(worst, relative_error(leaf.grad.ravel()[entries], numeric))
        return worst

    return measure
