import numpy as np
import pytest

from gridloc.compositor import ImageBuffer
from gridloc.dataset import load_annotations, sample_subset
from gridloc.sweep import EvalDataset
from gridloc.synthetic import make_coco_fixture


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("coco")
    make_coco_fixture(root, n_images=10, seed=7)
    return root


@pytest.fixture(scope="session")
def fixture_index(fixture_root):
    return load_annotations(fixture_root / "instances.json")


@pytest.fixture(scope="session")
def fixture_dataset(fixture_root, fixture_index):
    subset = sample_subset(fixture_index, 10, seed=0)
    return EvalDataset(fixture_index, subset, fixture_root / "images")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, width, height):
    return ImageBuffer(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))


@pytest.fixture(scope="session")
def square_dataset(tmp_path_factory):
    """One 320x240 image holding a single object at corners (50, 50, 150, 150)."""
    root = tmp_path_factory.mktemp("square")
    index = load_annotations(make_coco_fixture(root, n_images=1, size=(320, 240),
                                               boxes={0: [(50, 50, 100, 100, "person")]}))
    return EvalDataset(index, sample_subset(index, 1, seed=0), root / "images")


@pytest.fixture(scope="session")
def paper_echo_report(fixture_dataset):
    """Default 61-configuration sweep over the fixture with the echo backend."""
    from gridloc.client import MockEchoBackend
    from gridloc.sweep import SweepSpec, run_sweep

    return run_sweep(SweepSpec(), fixture_dataset, MockEchoBackend())


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
