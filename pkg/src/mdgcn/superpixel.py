"""SLIC superpixels over full spectra, node features, adjacency and label projection."""
from __future__ import annotations

import heapq
import logging
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from mdgcn.datacube import DataCube, SplitSpec, standardize
from mdgcn.errors import ContractError, ParameterError

log = logging.getLogger(__name__)

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Segmentation:
    """A partition of the pixel grid into ``n_segments`` labeled regions."""

    assignment: np.ndarray  # (H, W) ints in 0..M-1

    @property
    def n_segments(self) -> int:
        return int(self.assignment.max()) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.assignment.shape

    @cached_property
    def member_lists(self) -> list[np.ndarray]:
        """Flat (row-major) pixel indices of every superpixel, ascending."""
        flat = self.assignment.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(self.n_segments + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(self.n_segments)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment.ravel(), minlength=self.n_segments)


@dataclass(frozen=True)
class NodeLabels:
    labels: np.ndarray  # (M,) ints, 0 = unlabeled

    @property
    def labeled(self) -> np.ndarray:
        return np.flatnonzero(self.labels > 0)

    def one_hot(self, n_classes: int) -> np.ndarray:
        y = np.zeros((self.labels.size, n_classes))
        idx = self.labeled
        y[idx, self.labels[idx] - 1] = 1.0
        return y


def _grid_shape(height: int, width: int, k: int) -> tuple[int, int]:
    ny = max(1, min(height, round(math.sqrt(k * height / width))))
    nx = max(1, min(width, round(k / ny)))
    return ny, nx


def _gradient_magnitude(x: np.ndarray) -> np.ndarray:
    p = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dy = p[2:, 1:-1] - p[:-2, 1:-1]
    dx = p[1:-1, 2:] - p[1:-1, :-2]
    return (dy * dy).sum(axis=2) + (dx * dx).sum(axis=2)


def _initial_centers(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeds at the cell centers of a regular grid.

    A seed moves to the lowest-gradient pixel of the 3x3 patch around it only
    when that pixel is strictly smoother and not already a seed; otherwise it
    stays at the exact (possibly fractional) cell center.
    """
    h, w, _ = x.shape
    ny, nx = _grid_shape(h, w, k)
    rows = (np.arange(ny) + 0.5) * h / ny - 0.5
    cols = (np.arange(nx) + 0.5) * w / nx - 0.5
    grad = _gradient_magnitude(x)
    taken = {(math.floor(r + 0.5), math.floor(c + 0.5)) for r in rows for c in cols}
    pos, spec = [], []
    for r in rows:
        for c in cols:
            base = (math.floor(r + 0.5), math.floor(c + 0.5))
            best, best_g = base, grad[base]
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = base[0] + dr, base[1] + dc
                    if 0 <= rr < h and 0 <= cc < w and (rr, cc) not in taken and grad[rr, cc] < best_g:
                        best, best_g = (rr, cc), grad[rr, cc]
            if best != base:
                taken.discard(base)
                taken.add(best)
                pos.append(best)
            else:
                pos.append((r, c))
            spec.append(x[best])
    return np.array(pos, dtype=float), np.array(spec)


def _assign(x: np.ndarray, pos: np.ndarray, spec: np.ndarray, step: float, m: float) -> np.ndarray:
    h, w, _ = x.shape
    labels = np.full((h, w), -1, dtype=np.int64)
    dist = np.full((h, w), np.inf)
    spatial_w = (m / step) ** 2
    for i, ((cy, cx), mu) in enumerate(zip(pos, spec)):
        r0, r1 = max(0, math.ceil(cy - step)), min(h, math.floor(cy + step) + 1)
        c0, c1 = max(0, math.ceil(cx - step)), min(w, math.floor(cx + step) + 1)
        if r0 >= r1 or c0 >= c1:
            continue
        diff = x[r0:r1, c0:c1] - mu
        d_spec = np.einsum("ijk,ijk->ij", diff, diff)
        yy = (np.arange(r0, r1) - cy)[:, None]
        xx = (np.arange(c0, c1) - cx)[None, :]
        d = d_spec + spatial_w * (yy * yy + xx * xx)
        window = dist[r0:r1, c0:c1]
        better = d < window  # strict: ties keep the lower cluster index
        window[better] = d[better]
        labels[r0:r1, c0:c1][better] = i
    return labels


def _update(x: np.ndarray, labels: np.ndarray, pos: np.ndarray, spec: np.ndarray):
    h, w, b = x.shape
    n = len(pos)
    flat = labels.ravel()
    ok = flat >= 0
    counts = np.bincount(flat[ok], minlength=n).astype(float)
    rr, cc = np.divmod(np.arange(h * w), w)
    new_pos = pos.copy()
    new_spec = spec.copy()
    nonempty = counts > 0
    for j, coord in enumerate((rr, cc)):
        sums = np.bincount(flat[ok], weights=coord[ok], minlength=n)
        new_pos[nonempty, j] = sums[nonempty] / counts[nonempty]
    xf = x.reshape(-1, b)[ok]
    for band in range(b):
        sums = np.bincount(flat[ok], weights=xf[:, band], minlength=n)
        new_spec[nonempty, band] = sums[nonempty] / counts[nonempty]
    return new_pos, new_spec


def _enforce_connectivity(labels: np.ndarray, x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Keep each cluster's largest 4-connected component and regrow the rest.

    Pixels of discarded fragments (and pixels no center reached) are absorbed
    by seeded region growing: the frontier pixel whose spectrum is closest to
    an adjacent kept cluster's center joins it first. Every pixel joins a
    region it touches, so regions stay 4-connected.
    """
    h, w = labels.shape
    out = np.full((h, w), -1, dtype=np.int64)
    for lab in np.unique(labels):
        if lab < 0:
            continue
        comp, n = ndimage.label(labels == lab, structure=_FOUR_CONNECTED)
        sizes = np.bincount(comp.ravel(), minlength=n + 1)[1:]
        out[comp == int(np.argmax(sizes)) + 1] = lab  # first largest on ties

    flat_out = out.ravel()
    flat_x = x.reshape(h * w, -1)
    heap: list[tuple[float, int, int]] = []

    def push_neighbors(p: int, lab: int) -> None:
        r, c = divmod(p, w)
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < h and 0 <= cc < w:
                q = rr * w + cc
                if flat_out[q] < 0:
                    d = flat_x[q] - centers[lab]
                    heapq.heappush(heap, (float(d @ d), lab, q))

    for p in np.flatnonzero(flat_out >= 0):
        push_neighbors(int(p), int(flat_out[p]))
    while heap:
        _, lab, q = heapq.heappop(heap)
        if flat_out[q] >= 0:
            continue
        flat_out[q] = lab
        push_neighbors(q, lab)

    # relabel to 0..M-1 in order of first appearance (row-major)
    present, first = np.unique(flat_out, return_index=True)
    remap = np.empty(out.max() + 1, dtype=np.int64)
    remap[present[np.argsort(first)]] = np.arange(present.size)
    return remap[out]


def slic_segment(cube: DataCube, k: int | None = None, m: float = 0.1, iters: int = 10) -> Segmentation:
    """SLIC superpixels using the full standardized spectrum as the color term.

    Distance to a center is ``sqrt(d_spec^2 + m^2 (d_xy / S)^2)`` with
    ``S = sqrt(H W / K)``; each center searches a ``2S x 2S`` window.
    """
    h, w = cube.height, cube.width
    if k is None:
        k = math.ceil(h * w / 100)
    if not 1 <= k <= h * w:
        raise ParameterError(f"superpixel count K must lie in [1, {h * w}], got {k}")
    if m <= 0:
        raise ParameterError(f"compactness m must be > 0, got {m}")
    if iters < 1:
        raise ParameterError(f"iteration cap must be >= 1, got {iters}")

    x = standardize(cube).values
    step = math.sqrt(h * w / k)
    pos, spec = _initial_centers(x, k)
    spatial_w = (m / step) ** 2
    for _ in range(iters):
        labels = _assign(x, pos, spec, step, m)
        new_pos, new_spec = _update(x, labels, pos, spec)
        moved = np.sqrt(
            ((new_spec - spec) ** 2).sum(axis=1) + spatial_w * ((new_pos - pos) ** 2).sum(axis=1)
        )
        pos, spec = new_pos, new_spec
        if moved.max() < 1e-4 * step:
            break
    labels = _assign(x, pos, spec, step, m)
    return Segmentation(_enforce_connectivity(labels, x, spec))


def superpixel_features(cube: DataCube, seg: Segmentation) -> np.ndarray:
    """(M, B) matrix whose row i is the mean spectrum of superpixel i."""
    if seg.shape != (cube.height, cube.width):
        raise ContractError(f"segmentation {seg.shape} does not match cube {cube.shape[:2]}")
    flat = seg.assignment.ravel()
    counts = np.bincount(flat, minlength=seg.n_segments)
    if (counts == 0).any():
        raise ContractError(f"empty superpixel(s): {np.flatnonzero(counts == 0).tolist()}")
    x = cube.values.reshape(-1, cube.bands).astype(np.float64)
    sums = np.zeros((seg.n_segments, cube.bands))
    np.add.at(sums, flat, x)
    return sums / counts[:, None]


def base_adjacency(seg: Segmentation) -> list[set[int]]:
    """Superpixels sharing at least one 4-connected pixel edge."""
    a = seg.assignment
    neighbors: list[set[int]] = [set() for _ in range(seg.n_segments)]
    pairs = np.concatenate([
        np.stack([a[:, :-1].ravel(), a[:, 1:].ravel()], axis=1),
        np.stack([a[:-1, :].ravel(), a[1:, :].ravel()], axis=1),
    ])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    for i, j in np.unique(pairs, axis=0):
        neighbors[i].add(int(j))
        neighbors[j].add(int(i))
    return neighbors


def _majority(classes: list[int]) -> int:
    counts = Counter(classes)
    top = max(counts.values())
    return min(c for c, n in counts.items() if n == top)


def project_labels(seg: Segmentation, split: SplitSpec) -> tuple[NodeLabels, NodeLabels]:
    """Majority-vote the split's pixels onto superpixels.

    Returns (train, validation) node labels. A superpixel holding training
    pixels is never a validation node.
    """
    h, w = seg.shape
    per_node: dict[str, dict[int, list[int]]] = {"train": {}, "val": {}}
    for role, pixels in (("train", split.train_pixels), ("val", split.validation_pixels)):
        for r, c, k in pixels:
            if not (0 <= r < h and 0 <= c < w):
                raise ContractError(f"split pixel ({r}, {c}) lies outside the {h}x{w} image")
            per_node[role].setdefault(int(seg.assignment[r, c]), []).append(k)

    train = np.zeros(seg.n_segments, dtype=np.int64)
    for node, classes in per_node["train"].items():
        train[node] = _majority(classes)
    val = np.zeros(seg.n_segments, dtype=np.int64)
    clashes = []
    for node, classes in per_node["val"].items():
        if train[node]:
            clashes.append(node)
            continue
        val[node] = _majority(classes)
    if clashes:
        log.warning("superpixels %s hold both train and validation pixels; used for training only", clashes)
    return NodeLabels(train), NodeLabels(val)


def is_four_connected(mask: np.ndarray) -> bool:
    _, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
    return n == 1


def boundary_mask(seg: Segmentation) -> np.ndarray:
    a = seg.assignment
    edge = np.zeros(a.shape, dtype=bool)
    edge[:, :-1] |= a[:, :-1] != a[:, 1:]
    edge[:-1, :] |= a[:-1, :] != a[1:, :]
    return edge


def save_segmentation(path, seg: Segmentation) -> None:
    h, w = seg.shape
    rr, cc = np.divmod(np.arange(h * w), w)
    with open(path, "w") as fh:
        for r, c, s in zip(rr, cc, seg.assignment.ravel()):
            fh.write(f"{r},{c},{s}\n")


def load_segmentation(path) -> Segmentation:
    rows = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    h, w = rows[:, 0].max() + 1, rows[:, 1].max() + 1
    a = np.full((h, w), -1, dtype=np.int64)
    a[rows[:, 0], rows[:, 1]] = rows[:, 2]
    if (a < 0).any():
        raise ContractError(f"{path}: segmentation does not cover every pixel")
    return Segmentation(a)
