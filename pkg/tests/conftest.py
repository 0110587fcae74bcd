import numpy as np
import pytest

from mdgcn.datacube import sample_training_pixels
from mdgcn.graph import ScaleGraph, normalize_adjacency
from mdgcn.pipeline import prepare
from mdgcn.synthetic import block_scene

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_graph(rng, m, density=0.5, scale=1):
    """ScaleGraph over a random symmetric weighted adjacency."""
    a = np.triu(rng.uniform(0.0, 1.0, (m, m)) * (rng.uniform(size=(m, m)) < density), k=1)
    a = a + a.T
    neigh = [set(np.flatnonzero(row).tolist()) for row in a]
    return ScaleGraph(scale, neigh, a, normalize_adjacency(a), 0.2)


@pytest.fixture(scope="session")
def scene():
    """The acceptance scene: 64x64x16, 4 classes, block layout, noise 0.1."""
    return block_scene(64, 64, 16, n_classes=4, blocks=4, noise=0.1, seed=0)


@pytest.fixture(scope="session")
def scene_prep(scene):
    cube, _ = scene
    return prepare(cube)


@pytest.fixture(scope="session")
def scene_split(scene):
    _, labels = scene
    return sample_training_pixels(labels, per_class=10, val_fraction=0.1, seed=0)
