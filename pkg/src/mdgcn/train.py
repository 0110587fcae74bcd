"""Full-batch training: cross-entropy, backprop, Adam and the ablation variants."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mdgcn.dyngcn import ForwardTrace, Model, forward, init_model, sigmoid
from mdgcn.errors import NumericError, ParameterError, TrainingSetupError
from mdgcn.graph import ScaleGraph
from mdgcn.superpixel import NodeLabels

log = logging.getLogger(__name__)

VARIANTS = ("mdgcn", "fixed_graph", "single_scale")


def parse_variant(variant: str) -> tuple[str, int | None]:
    """``"mdgcn"``, ``"fixed_graph"`` or ``"single_scale=<s>"``; hyphens allowed."""
    name, _, arg = variant.replace("-", "_").partition("=")
    if name not in VARIANTS:
        raise ParameterError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if name == "single_scale":
        try:
            scale = int(arg)
        except ValueError:
            raise ParameterError(f"single_scale needs a hop count, e.g. single_scale=2 (got {variant!r})")
        if scale < 1:
            raise ParameterError(f"single_scale hop count must be >= 1, got {scale}")
        return name, scale
    if arg:
        raise ParameterError(f"variant {name!r} takes no argument")
    return name, None


@dataclass
class TrainConfig:
    iterations: int = 5000
    learning_rate: float = 0.0005
    scales: tuple[int, ...] = (1, 2, 3)
    layers: int = 2
    hidden: int = 20
    alpha: float = 0.1
    beta: float = 0.01
    seed: int = 0
    variant: str = "mdgcn"

    def __post_init__(self) -> None:
        self.scales = tuple(int(s) for s in self.scales)
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.layers < 1 or self.hidden < 1:
            raise ParameterError("layers and hidden width must be >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ParameterError("alpha and beta must be non-negative")
        parse_variant(self.variant)

    @property
    def dynamic(self) -> bool:
        return parse_variant(self.variant)[0] != "fixed_graph"

    @property
    def active_scales(self) -> tuple[int, ...]:
        name, scale = parse_variant(self.variant)
        return (scale,) if name == "single_scale" else self.scales

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d


def select_graphs(config: TrainConfig, graphs: Sequence[ScaleGraph]) -> list[ScaleGraph]:
    by_scale = {g.scale: g for g in graphs}
    missing = [s for s in config.active_scales if s not in by_scale]
    if missing:
        raise TrainingSetupError(f"no graph built for scale(s) {missing}")
    return [by_scale[s] for s in config.active_scales]


def loss(probs: np.ndarray, y: np.ndarray, labeled: np.ndarray) -> float:
    """-sum over labeled rows g and classes f of Y[g, f] ln P[g, f]."""
    labeled = np.asarray(labeled, dtype=np.int64)
    if labeled.size == 0:
        raise TrainingSetupError("no labeled nodes to train on")
    p = probs[labeled]
    if not (p > 0).all():
        raise NumericError("probabilities must be strictly positive on labeled rows")
    return float(-(y[labeled] * np.log(p)).sum())


@dataclass
class Gradients:
    loss: float
    weights: list[list[np.ndarray]]
    trace: ForwardTrace


def backward(model: Model, trace: ForwardTrace, y: np.ndarray, labeled: np.ndarray) -> list[list[np.ndarray]]:
    """d loss / d W[s][l] with every adjacency treated as a constant."""
    d_out = np.zeros_like(trace.probs)
    d_out[labeled] = trace.probs[labeled] - y[labeled]
    grads = []
    for s in range(model.n_scales):
        acts, pres, adjs = trace.activations[s], trace.pre_activations[s], trace.adjacencies[s]
        per_scale = [None] * model.n_layers
        d_h = d_out
        for l in reversed(range(model.n_layers)):
            d_z = d_h * sigmoid(pres[l])
            per_scale[l] = (adjs[l] @ acts[l]).T @ d_z
            if not np.isfinite(per_scale[l]).all():
                raise NumericError(f"non-finite gradient at scale index {s}, layer {l + 1}")
            if l:
                d_h = adjs[l].T @ d_z @ model.weights[s][l].T
        grads.append(per_scale)
    return grads


def compute_gradients(
    model: Model,
    features: np.ndarray,
    graphs: Sequence[ScaleGraph],
    y: np.ndarray,
    labeled: np.ndarray,
    dynamic: bool = True,
) -> Gradients:
    trace = forward(model, features, graphs, dynamic=dynamic)
    value = loss(trace.probs, y, labeled)
    return Gradients(value, backward(model, trace, y, np.asarray(labeled)), trace)


@dataclass
class OptimState:
    first: list[list[np.ndarray]]
    second: list[list[np.ndarray]]
    step: int = 0

    @classmethod
    def zeros_like(cls, model: Model) -> "OptimState":
        return cls(
            [[np.zeros_like(w) for w in ws] for ws in model.weights],
            [[np.zeros_like(w) for w in ws] for ws in model.weights],
        )


def adam_step(
    model: Model,
    grads: list[list[np.ndarray]],
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[Model, OptimState]:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for s, per_scale in enumerate(grads):
        for l, g in enumerate(per_scale):
            m, v = state.first[s][l], state.second[s][l]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            model.weights[s][l] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return model, state


@dataclass
class TrainResult:
    model: Model  # after the final iteration
    best_model: Model  # highest validation accuracy, latest on ties
    best_iteration: int
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def save_history(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "train_loss", "val_acc"])
            for it, lo, acc in self.history:
                writer.writerow([it, repr(float(lo)), repr(float(acc))])


def node_accuracy(probs: np.ndarray, node_labels: NodeLabels) -> float:
    idx = node_labels.labeled
    if idx.size == 0:
        return float("nan")
    pred = np.argmax(probs[idx], axis=1) + 1
    return float(np.mean(pred == node_labels.labels[idx]))


def train(
    config: TrainConfig,
    features: np.ndarray,
    graphs: Sequence[ScaleGraph],
    node_labels: NodeLabels,
    val_labels: NodeLabels | None = None,
    n_classes: int | None = None,
) -> TrainResult:
    labeled = node_labels.labeled
    if labeled.size == 0:
        raise TrainingSetupError("no superpixel carries a training label")
    if n_classes is None:
        n_classes = int(node_labels.labels.max())
        if val_labels is not None:
            n_classes = max(n_classes, int(val_labels.labels.max()))
    if n_classes < 1:
        raise TrainingSetupError("at least one class is required")
    if val_labels is None:
        val_labels = NodeLabels(np.zeros_like(node_labels.labels))

    active = select_graphs(config, graphs)
    y = node_labels.one_hot(n_classes)
    model = init_model(
        len(active), config.layers, features.shape[1], config.hidden, n_classes,
        config.alpha, config.beta, config.seed,
    )
    state = OptimState.zeros_like(model)
    result = TrainResult(model, model.copy(), 0)
    best_acc = -np.inf
    # overflow surfaces as NumericError below, so numpy's own warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, config.iterations + 1):
            try:
                g = compute_gradients(model, features, active, y, labeled, dynamic=config.dynamic)
            except NumericError as exc:
                raise NumericError(f"training diverged at iteration {it}: {exc}") from exc
            if not np.isfinite(g.loss):
                raise NumericError(f"training diverged at iteration {it}: loss = {g.loss}")
            acc = node_accuracy(g.trace.probs, val_labels)
            result.history.append((it, g.loss, acc))
            if not np.isnan(acc) and acc >= best_acc:
                best_acc = acc
                result.best_model = model.copy()
                result.best_iteration = it
            adam_step(model, g.weights, state, config.learning_rate)
            if it % 1000 == 0:
                log.info("iter %d  loss %.6f  val_acc %.4f", it, g.loss, acc)
    if np.isinf(best_acc):
        result.best_model = model.copy()
        result.best_iteration = config.iterations
    return result
