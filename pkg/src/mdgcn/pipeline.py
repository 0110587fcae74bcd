"""Glue from a cube + split to trained predictions, shared by the CLI and tests."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mdgcn.datacube import DataCube, LabelMap, SplitSpec, standardize
from mdgcn.dyngcn import Model, forward
from mdgcn.evaluate import EvalReport, evaluate, predict_pixels
from mdgcn.graph import ScaleGraph, build_scale_graphs
from mdgcn.superpixel import (
    NodeLabels,
    Segmentation,
    base_adjacency,
    project_labels,
    slic_segment,
    superpixel_features,
)
from mdgcn.train import TrainConfig, TrainResult, select_graphs, train


@dataclass
class Prepared:
    segmentation: Segmentation
    features: np.ndarray
    graphs: list[ScaleGraph]


def prepare(
    cube: DataCube,
    k: int | None = None,
    m: float = 0.1,
    slic_iters: int = 10,
    gamma: float = 0.2,
    scales: Sequence[int] = (1, 2, 3),
) -> Prepared:
    std = standardize(cube)
    seg = slic_segment(std, k, m, slic_iters)
    features = superpixel_features(std, seg)
    graphs = build_scale_graphs(features, base_adjacency(seg), scales, gamma)
    return Prepared(seg, features, graphs)


def fit(
    prep: Prepared, split: SplitSpec, config: TrainConfig, n_classes: int
) -> tuple[TrainResult, NodeLabels, NodeLabels]:
    node_labels, val_labels = project_labels(prep.segmentation, split)
    result = train(config, prep.features, prep.graphs, node_labels, val_labels, n_classes)
    return result, node_labels, val_labels


def predict(prep: Prepared, model: Model, config: TrainConfig) -> np.ndarray:
    trace = forward(model, prep.features, select_graphs(config, prep.graphs), dynamic=config.dynamic)
    return predict_pixels(trace.probs, prep.segmentation)


def run(
    cube: DataCube,
    labels: LabelMap,
    split: SplitSpec,
    config: TrainConfig,
    prep: Prepared | None = None,
    **prepare_kwargs,
) -> tuple[EvalReport, TrainResult, np.ndarray]:
    """Segment (unless ``prep`` is given), train, predict with the best
    validation checkpoint, and score on every labeled pixel outside the split."""
    if prep is None:
        prep = prepare(cube, scales=sorted(set(config.scales) | set(config.active_scales)), **prepare_kwargs)
    result, _, _ = fit(prep, split, config, labels.n_classes)
    pred = predict(prep, result.best_model, config)
    return evaluate(pred, labels, exclude=split), result, pred
