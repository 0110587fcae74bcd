"""Multi-hop superpixel graphs with Gaussian edge weights and GCN renormalization."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from mdgcn.errors import ContractError, ParameterError

NeighborSets = list[set[int]]


@dataclass(frozen=True)
class ScaleGraph:
    scale: int
    neighbor_sets: NeighborSets
    adjacency: np.ndarray  # (M, M) Gaussian weights on s-hop pairs, zero diagonal
    normalized: np.ndarray  # D^-1/2 (A + I) D^-1/2
    gamma: float

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


def _to_matrix(neighbors: NeighborSets) -> np.ndarray:
    n = len(neighbors)
    mat = np.zeros((n, n), dtype=bool)
    for i, js in enumerate(neighbors):
        for j in js:
            mat[i, j] = True
    return mat


def expand_receptive_field(base: NeighborSets, s: int) -> NeighborSets:
    """Nodes within ``s`` hops, via R_s = R_{s-1} U R_1(R_{s-1}) with R_0(i) = {i}.

    The node itself is excluded from the returned sets.
    """
    if s < 1:
        raise ParameterError(f"hop count must be >= 1, got {s}")
    one_hop = _to_matrix(base)
    if (one_hop != one_hop.T).any() or one_hop.diagonal().any():
        raise ContractError("base neighbor sets must be symmetric and irreflexive")
    reach = np.eye(len(base), dtype=bool)
    for _ in range(s):
        reach = reach | ((reach.astype(np.int64) @ one_hop.astype(np.int64)) > 0)
    np.fill_diagonal(reach, False)
    return [set(np.flatnonzero(row).tolist()) for row in reach]


def initial_adjacency(features: np.ndarray, neighbors: NeighborSets, gamma: float = 0.2) -> np.ndarray:
    """exp(-gamma ||x_i - x_j||^2) on neighbor pairs (either direction), else 0."""
    if gamma <= 0:
        raise ParameterError(f"gamma must be > 0, got {gamma}")
    if not np.isfinite(features).all():
        raise ContractError("node features must be finite")
    mask = _to_matrix(neighbors)
    mask |= mask.T
    np.fill_diagonal(mask, False)
    rows, cols = np.nonzero(mask)
    diff = features[rows] - features[cols]
    adj = np.zeros(mask.shape)
    adj[rows, cols] = np.exp(-gamma * np.einsum("ij,ij->i", diff, diff))
    return adj


def normalize_adjacency(adj: np.ndarray) -> np.ndarray:
    """Renormalization trick: D~^-1/2 (A + I) D~^-1/2 with D~ the row sums of A + I."""
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ContractError(f"adjacency must be square, got shape {adj.shape}")
    scale = max(1.0, float(np.abs(adj).max(initial=0.0)))
    if not np.allclose(adj, adj.T, rtol=0.0, atol=1e-10 * scale):
        raise ContractError("adjacency must be symmetric")
    if (adj < 0).any():
        raise ContractError("adjacency must be non-negative")
    a_tilde = adj + np.eye(adj.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]


def build_scale_graphs(
    features: np.ndarray,
    base: NeighborSets,
    scales: Sequence[int] = (1, 2, 3),
    gamma: float = 0.2,
) -> list[ScaleGraph]:
    graphs = []
    for s in scales:
        neigh = expand_receptive_field(base, s)
        adj = initial_adjacency(features, neigh, gamma)
        graphs.append(ScaleGraph(s, neigh, adj, normalize_adjacency(adj), gamma))
    return graphs


def save_edge_list(path: str | Path, graph: ScaleGraph) -> None:
    """Header ``M,scale,gamma`` then one ``i,j,weight`` line per edge with i < j."""
    rows, cols = np.nonzero(np.triu(graph.adjacency, k=1))
    with open(path, "w") as fh:
        fh.write(f"{graph.n_nodes},{graph.scale},{float(graph.gamma)!r}\n")
        for i, j in zip(rows, cols):
            fh.write(f"{i},{j},{float(graph.adjacency[i, j])!r}\n")


def load_edge_list(path: str | Path) -> tuple[np.ndarray, int, float]:
    """Returns (adjacency, scale, gamma)."""
    lines = Path(path).read_text().splitlines()
    m, scale, gamma = lines[0].split(",")
    adj = np.zeros((int(m), int(m)))
    for line in lines[1:]:
        if line.strip():
            i, j, wgt = line.split(",")
            adj[int(i), int(j)] = adj[int(j), int(i)] = float(wgt)
    return adj, int(scale), float(gamma)
