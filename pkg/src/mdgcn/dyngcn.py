"""Multi-scale dynamic graph convolution: model parameters and forward pass."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mdgcn.errors import ContractError, FormatError, LengthError, NumericError
from mdgcn.graph import ScaleGraph, normalize_adjacency

CHECKPOINT_MAGIC = b"MDGC"


@dataclass
class Model:
    """Weights ``weights[s][l]`` for scale s and layer l (both 0-based).

    Layer widths chain bands -> hidden -> ... -> hidden -> n_classes. ``betas``
    holds one noise weight per graph update, i.e. ``n_layers - 1`` values.
    """

    weights: list[list[np.ndarray]]
    alpha: float = 0.1
    betas: list[float] = field(default_factory=lambda: [0.01])

    def __post_init__(self) -> None:
        if not self.weights or not self.weights[0]:
            raise ContractError("model needs at least one scale and one layer")
        dims = [w.shape for w in self.weights[0]]
        for per_scale in self.weights:
            if [w.shape for w in per_scale] != dims:
                raise ContractError("every scale must share the same layer shapes")
        for a, b in zip(dims, dims[1:]):
            if a[1] != b[0]:
                raise ContractError(f"layer shapes do not chain: {dims}")
        if len(self.betas) != self.n_layers - 1:
            raise ContractError(f"expected {self.n_layers - 1} beta values, got {len(self.betas)}")
        if self.alpha < 0 or any(b < 0 for b in self.betas):
            raise ContractError("alpha and beta must be non-negative")

    @property
    def n_scales(self) -> int:
        return len(self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights[0])

    @property
    def bands(self) -> int:
        return self.weights[0][0].shape[0]

    @property
    def hidden(self) -> int:
        return self.weights[0][0].shape[1] if self.n_layers > 1 else 0

    @property
    def n_classes(self) -> int:
        return self.weights[0][-1].shape[1]

    def copy(self) -> "Model":
        return Model([[w.copy() for w in ws] for ws in self.weights], self.alpha, list(self.betas))

    def n_parameters(self) -> int:
        return sum(w.size for ws in self.weights for w in ws)


def init_model(
    n_scales: int,
    n_layers: int,
    bands: int,
    hidden: int,
    n_classes: int,
    alpha: float = 0.1,
    beta: float | Sequence[float] = 0.01,
    seed: int | None = 0,
) -> Model:
    """Glorot-uniform weights: U[-r, r] with r = sqrt(6 / (fan_in + fan_out))."""
    rng = np.random.default_rng(seed)
    dims = [bands] + [hidden] * (n_layers - 1) + [n_classes]
    weights = []
    for _ in range(n_scales):
        per_scale = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            r = math.sqrt(6.0 / (fan_in + fan_out))
            per_scale.append(rng.uniform(-r, r, size=(fan_in, fan_out)))
        weights.append(per_scale)
    betas = [float(beta)] * (n_layers - 1) if np.isscalar(beta) else [float(b) for b in beta]
    return Model(weights, float(alpha), betas)


def softplus(x):
    """ln(1 + e^x) without overflow."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def layer_forward(a_hat: np.ndarray, h_prev: np.ndarray, w: np.ndarray) -> np.ndarray:
    """softplus(A_hat @ H_prev @ W)."""
    m = a_hat.shape[0]
    if a_hat.shape != (m, m) or h_prev.shape[0] != m or h_prev.shape[1] != w.shape[0]:
        raise ContractError(
            f"layer shapes do not conform: A {a_hat.shape}, H {h_prev.shape}, W {w.shape}"
        )
    return softplus(a_hat @ h_prev @ w)


def dynamic_update(proj: np.ndarray, a_cur: np.ndarray, h: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """proj (A_cur + alpha H H^T) proj^T + beta I."""
    m = proj.shape[0]
    if proj.shape != (m, m) or a_cur.shape != (m, m) or h.shape[0] != m:
        raise ContractError(f"shapes do not conform: P {proj.shape}, A {a_cur.shape}, H {h.shape}")
    fused = a_cur + alpha * (h @ h.T)
    out = proj @ fused @ proj.T
    # the two triangles differ by rounding only
    out = (out + out.T) / 2.0
    out[np.diag_indices(m)] += beta
    return out


@dataclass
class ForwardTrace:
    """Everything a backward pass needs.

    ``activations[s][l]`` holds H^(l) for l = 0..L (H^(0) is the input),
    ``pre_activations[s][l]`` the matrix fed to softplus for layer l+1, and
    ``adjacencies[s][l]`` the operator used by layer l+1.
    """

    activations: list[list[np.ndarray]]
    pre_activations: list[list[np.ndarray]]
    adjacencies: list[list[np.ndarray]]
    logits: np.ndarray  # O, sum over scales of the last activations
    probs: np.ndarray  # row-softmax of O


def forward(
    model: Model,
    features: np.ndarray,
    graphs: Sequence[ScaleGraph],
    dynamic: bool = True,
    adjacencies: Sequence[Sequence[np.ndarray]] | None = None,
) -> ForwardTrace:
    """Run every scale's layer stack and sum the outputs.

    Between layers the adjacency is refreshed by ``dynamic_update`` projected
    with the scale's normalized initial adjacency, then renormalized. Passing
    ``adjacencies`` replays a previous trace's operators instead, which is how
    gradients are checked with the graph held fixed.
    """
    if len(graphs) != model.n_scales:
        raise ContractError(f"model has {model.n_scales} scales but {len(graphs)} graphs were given")
    if features.shape[1] != model.bands:
        raise ContractError(f"model expects {model.bands} bands, features have {features.shape[1]}")
    n_layers = model.n_layers
    acts, pres, adjs = [], [], []
    for s, graph in enumerate(graphs):
        if graph.n_nodes != features.shape[0]:
            raise ContractError(f"graph at scale {graph.scale} has {graph.n_nodes} nodes, features {features.shape[0]}")
        h = [features]
        z_list = []
        a_list = [graph.normalized] if adjacencies is None else [adjacencies[s][0]]
        for l in range(n_layers):
            a = a_list[l]
            z = a @ h[l] @ model.weights[s][l]
            z_list.append(z)
            h.append(softplus(z))
            if l + 1 < n_layers:
                if adjacencies is not None:
                    a_list.append(adjacencies[s][l + 1])
                elif dynamic:
                    updated = dynamic_update(graph.normalized, a, h[l + 1], model.alpha, model.betas[l])
                    if not np.isfinite(updated).all():
                        raise NumericError(f"non-finite adjacency update at scale {graph.scale}, layer {l + 1}")
                    a_list.append(normalize_adjacency(updated))
                else:
                    a_list.append(graph.normalized)
        acts.append(h)
        pres.append(z_list)
        adjs.append(a_list)
    logits = sum(h[-1] for h in acts)
    return ForwardTrace(acts, pres, adjs, logits, softmax_rows(logits))


def save_checkpoint(path: str | Path, model: Model) -> None:
    s, l = model.n_scales, model.n_layers
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<5I", s, l, model.bands, model.hidden, model.n_classes))
        fh.write(struct.pack(f"<{l}d", model.alpha, *model.betas))
        for per_scale in model.weights:
            for w in per_scale:
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Model:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    if len(buf) < 24:
        raise LengthError(f"{path}: truncated header")
    s, l, b, h, c = struct.unpack_from("<5I", buf, 4)
    offset = 24
    dims = [b] + [h] * (l - 1) + [c]
    n_weights = s * sum(i * o for i, o in zip(dims, dims[1:]))
    if len(buf) != offset + 8 * (l + n_weights):
        raise LengthError(f"{path}: payload length does not match header ({s}, {l}, {b}, {h}, {c})")
    alpha, *betas = struct.unpack_from(f"<{l}d", buf, offset)
    offset += 8 * l
    weights = []
    for _ in range(s):
        per_scale = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            n = fan_in * fan_out
            per_scale.append(np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(fan_in, fan_out).copy())
            offset += 8 * n
        weights.append(per_scale)
    return Model(weights, alpha, list(betas))
