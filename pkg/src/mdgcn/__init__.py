"""Multi-scale dynamic graph convolution for hyperspectral image classification."""

from mdgcn.datacube import (
    DataCube,
    LabelMap,
    SplitSpec,
    load_cube,
    load_labels,
    sample_training_pixels,
    save_cube,
    save_labels,
    standardize,
)
from mdgcn.dyngcn import Model, dynamic_update, forward, init_model, layer_forward, softplus
from mdgcn.evaluate import EvalReport, evaluate, predict_pixels, render_map
from mdgcn.graph import ScaleGraph, build_scale_graphs, expand_receptive_field, initial_adjacency, normalize_adjacency
from mdgcn.superpixel import NodeLabels, Segmentation, base_adjacency, project_labels, slic_segment, superpixel_features
from mdgcn.train import TrainConfig, adam_step, compute_gradients, loss, train

__version__ = "0.1.0"

__all__ = [
    "DataCube",
    "LabelMap",
    "SplitSpec",
    "load_cube",
    "load_labels",
    "sample_training_pixels",
    "save_cube",
    "save_labels",
    "standardize",
    "Model",
    "dynamic_update",
    "forward",
    "init_model",
    "layer_forward",
    "softplus",
    "EvalReport",
    "evaluate",
    "predict_pixels",
    "render_map",
    "ScaleGraph",
    "build_scale_graphs",
    "expand_receptive_field",
    "initial_adjacency",
    "normalize_adjacency",
    "NodeLabels",
    "Segmentation",
    "base_adjacency",
    "project_labels",
    "slic_segment",
    "superpixel_features",
    "TrainConfig",
    "adam_step",
    "compute_gradients",
    "loss",
    "train",
]
