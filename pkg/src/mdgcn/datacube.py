"""Hyperspectral cube and label-map I/O, standardization and label sampling.

On-disk formats (all little-endian):

    cube   : b"HSIC" | H, W, B (uint32) | H*W*B float32, band-sequential
    labels : b"HSIL" | H, W (uint32)    | H*W uint16, row-major
    split  : text lines ``row,col,class,role`` with role in {train, val}
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from mdgcn.errors import DataError, FormatError, LengthError, SamplingError, ShapeError

CUBE_MAGIC = b"HSIC"
LABEL_MAGIC = b"HSIL"

Pixel = tuple[int, int, int]


@dataclass(frozen=True)
class DataCube:
    """An H x W x B grid of spectral intensities indexed (row, col, band)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise ShapeError(f"cube must be 3-D (H, W, B), got shape {self.values.shape}")
        if min(self.values.shape) < 1:
            raise ShapeError(f"cube dimensions must be >= 1, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataError("cube contains non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class indices; 0 means unlabeled, classes run 1..C."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.labels.ndim != 2:
            raise ShapeError(f"label map must be 2-D, got shape {self.labels.shape}")
        if (self.labels < 0).any():
            raise DataError("label map contains negative class indices")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0


@dataclass(frozen=True)
class SplitSpec:
    train_pixels: list[Pixel]
    validation_pixels: list[Pixel]
    seed: int | None = None

    def __post_init__(self) -> None:
        train = {(r, c) for r, c, _ in self.train_pixels}
        val = {(r, c) for r, c, _ in self.validation_pixels}
        if train & val:
            raise SamplingError("train and validation pixel sets overlap")

    def all_pixels(self) -> list[Pixel]:
        return list(self.train_pixels) + list(self.validation_pixels)


def _read_header(buf: bytes, magic: bytes, n_dims: int, path: Path) -> tuple[int, ...]:
    if buf[:4] != magic:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    header_len = 4 + 4 * n_dims
    if len(buf) < header_len:
        raise LengthError(f"{path}: truncated header")
    return struct.unpack_from("<" + "I" * n_dims, buf, 4)


def load_cube(path: str | Path) -> DataCube:
    path = Path(path)
    buf = path.read_bytes()
    h, w, b = _read_header(buf, CUBE_MAGIC, 3, path)
    n = h * w * b
    payload = buf[16:]
    if len(payload) != 4 * n:
        raise LengthError(f"{path}: expected {n} float32 values, found {len(payload) / 4:g}")
    flat = np.frombuffer(payload, dtype="<f4")
    if not np.isfinite(flat).all():
        raise DataError(f"{path}: cube contains non-finite values")
    # band-sequential on disk -> (H, W, B) in memory
    values = flat.reshape(b, h, w).transpose(1, 2, 0).astype(np.float32)
    return DataCube(values)


def save_cube(path: str | Path, cube: DataCube) -> None:
    """Write ``cube`` as HSIC. Values are stored as float32."""
    h, w, b = cube.shape
    band_seq = np.ascontiguousarray(cube.values.transpose(2, 0, 1), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<III", h, w, b))
        fh.write(band_seq.tobytes())


def load_labels(path: str | Path, cube: DataCube | None = None) -> LabelMap:
    path = Path(path)
    buf = path.read_bytes()
    h, w = _read_header(buf, LABEL_MAGIC, 2, path)
    payload = buf[12:]
    if len(payload) != 2 * h * w:
        raise LengthError(f"{path}: expected {h * w} uint16 values, found {len(payload) / 2:g}")
    labels = np.frombuffer(payload, dtype="<u2").reshape(h, w).astype(np.int64)
    if cube is not None and (h, w) != (cube.height, cube.width):
        raise ShapeError(
            f"{path}: label grid {h}x{w} does not match cube {cube.height}x{cube.width}"
        )
    return LabelMap(labels)


def save_labels(path: str | Path, labels: LabelMap) -> None:
    arr = labels.labels
    if arr.max(initial=0) > 0xFFFF:
        raise DataError("class indices above 65535 cannot be stored as uint16")
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype="<u2").tobytes())


def standardize(cube: DataCube) -> DataCube:
    """Z-score every band over all pixels (population std); constant bands become 0."""
    x = cube.values.astype(np.float64)
    flat = x.reshape(-1, cube.bands)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    # rounding in the mean can leave a constant band with std ~1e-17
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    safe = np.where(constant, 1.0, std)
    out = (flat - mean) / safe
    out[:, constant] = 0.0
    return DataCube(out.reshape(cube.shape))


def sample_training_pixels(
    labels: LabelMap,
    per_class: int = 30,
    val_fraction: float = 0.1,
    seed: int | None = 0,
) -> SplitSpec:
    """Draw labeled pixels per class and split them into train/validation.

    A class with fewer than ``per_class`` labeled pixels gets ``ceil(per_class / 2)``
    draws instead (capped by what exists). Each class contributes at least one
    pixel to both roles.
    """
    if per_class < 2:
        raise SamplingError(f"per_class must be >= 2, got {per_class}")
    if not 0.0 <= val_fraction < 1.0:
        raise SamplingError(f"val_fraction must lie in [0, 1), got {val_fraction}")
    n_classes = labels.n_classes
    if n_classes == 0:
        raise SamplingError("label map has no labeled pixels")
    rng = np.random.default_rng(seed)
    flat = labels.labels.ravel()
    width = labels.width
    train: list[Pixel] = []
    val: list[Pixel] = []
    for cls in range(1, n_classes + 1):
        idx = np.flatnonzero(flat == cls)
        if idx.size < 2:
            raise SamplingError(f"class {cls} has {idx.size} labeled pixel(s); at least 2 required")
        n_draw = per_class if idx.size >= per_class else math.ceil(per_class / 2)
        n_draw = min(n_draw, idx.size)
        drawn = rng.choice(idx, size=n_draw, replace=False)
        n_val = int(math.floor(val_fraction * n_draw + 0.5))
        n_val = min(max(n_val, 1), n_draw - 1)
        for k, flat_i in enumerate(drawn):
            r, c = divmod(int(flat_i), width)
            (val if k < n_val else train).append((r, c, cls))
    return SplitSpec(train, val, seed)


def save_split(path: str | Path, split: SplitSpec) -> None:
    lines = [f"{r},{c},{k},train" for r, c, k in split.train_pixels]
    lines += [f"{r},{c},{k},val" for r, c, k in split.validation_pixels]
    Path(path).write_text("\n".join(lines) + "\n")


def load_split(path: str | Path, labels: LabelMap | None = None) -> SplitSpec:
    train: list[Pixel] = []
    val: list[Pixel] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4 or parts[3] not in ("train", "val"):
            raise FormatError(f"{path}:{lineno}: expected 'row,col,class,role', got {line!r}")
        r, c, k = (int(p) for p in parts[:3])
        (train if parts[3] == "train" else val).append((r, c, k))
    split = SplitSpec(train, val)
    if labels is not None:
        check_split(split, labels)
    return split


def check_split(split: SplitSpec, labels: LabelMap) -> None:
    """Every listed pixel must lie inside the map and carry its listed class."""
    for r, c, k in split.all_pixels():
        if not (0 <= r < labels.height and 0 <= c < labels.width):
            raise ShapeError(f"split pixel ({r}, {c}) lies outside the {labels.height}x{labels.width} map")
        if labels.labels[r, c] == 0 or labels.labels[r, c] != k:
            raise SamplingError(f"split pixel ({r}, {c}) class {k} disagrees with label map")


def pixel_mask(pixels: Iterable[Pixel], shape: tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for r, c, _ in pixels:
        mask[r, c] = True
    return mask
