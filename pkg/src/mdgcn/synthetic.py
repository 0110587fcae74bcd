"""Block-structured synthetic hyperspectral scenes for smoke tests and benchmarks."""
from __future__ import annotations

import numpy as np

from mdgcn.datacube import DataCube, LabelMap


def block_scene(
    height: int = 64,
    width: int = 64,
    bands: int = 16,
    n_classes: int = 4,
    blocks: int = 4,
    noise: float = 0.1,
    seed: int = 0,
) -> tuple[DataCube, LabelMap]:
    """A ``blocks x blocks`` mosaic of rectangular class regions.

    Each class has a mean spectrum drawn from N(0, 1) per band; every pixel
    adds i.i.d. N(0, noise^2). Classes are dealt round-robin over the blocks
    and then shuffled, so every class appears. All pixels are labeled.
    """
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(n_classes, bands))
    layout = rng.permutation(np.arange(blocks * blocks) % n_classes + 1).reshape(blocks, blocks)
    rows = np.arange(height) * blocks // height
    cols = np.arange(width) * blocks // width
    labels = layout[rows[:, None], cols[None, :]]
    values = means[labels - 1] + noise * rng.normal(size=(height, width, bands))
    return DataCube(values.astype(np.float32)), LabelMap(labels.astype(np.int64))
