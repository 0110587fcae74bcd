"""Pixel-level predictions, OA / AA / kappa, and PPM classification maps."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mdgcn.datacube import LabelMap, SplitSpec, pixel_mask
from mdgcn.errors import ContractError, EvaluationError, FormatError, PaletteError
from mdgcn.superpixel import Segmentation


def predict_nodes(probs: np.ndarray) -> np.ndarray:
    """1-based class per node; np.argmax already picks the first maximum."""
    return np.argmax(probs, axis=1) + 1


def predict_pixels(probs: np.ndarray, seg: Segmentation) -> np.ndarray:
    if probs.shape[0] != seg.n_segments:
        raise ContractError(f"{probs.shape[0]} node predictions for {seg.n_segments} superpixels")
    return predict_nodes(probs)[seg.assignment]


@dataclass
class EvalReport:
    confusion: np.ndarray  # rows = truth, cols = predicted, classes 1..C
    per_class_acc: np.ndarray  # NaN for classes with no test pixel
    oa: float
    aa: float
    kappa: float

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "per_class": [None if np.isnan(a) else float(a) for a in self.per_class_acc],
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def metrics_from_confusion(confusion: np.ndarray) -> EvalReport:
    confusion = np.asarray(confusion, dtype=np.int64)
    total = confusion.sum()
    if total == 0:
        raise EvaluationError("no test pixels to evaluate")
    rows = confusion.sum(axis=1)
    cols = confusion.sum(axis=0)
    diag = np.diag(confusion)
    present = rows > 0
    per_class = np.full(confusion.shape[0], np.nan)
    per_class[present] = diag[present] / rows[present]
    oa = diag.sum() / total
    p_e = float((rows * cols).sum()) / float(total) ** 2
    # p_e == 1 only when everything sits in one diagonal cell
    kappa = 1.0 if p_e == 1.0 else (oa - p_e) / (1.0 - p_e)
    return EvalReport(confusion, per_class, float(oa), float(per_class[present].mean()), float(kappa))


def evaluate(pred: np.ndarray, truth: LabelMap, exclude: SplitSpec | None = None) -> EvalReport:
    """Score predictions on labeled pixels that are not part of the split."""
    if pred.shape != truth.labels.shape:
        raise ContractError(f"prediction {pred.shape} does not match labels {truth.labels.shape}")
    mask = truth.labels > 0
    if exclude is not None:
        mask &= ~pixel_mask(exclude.all_pixels(), pred.shape)
    t = truth.labels[mask]
    p = pred[mask]
    n_classes = int(max(truth.n_classes, p.max(initial=0)))
    if (p < 1).any():
        raise EvaluationError("predictions must be class indices >= 1 on test pixels")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (t - 1, p - 1), 1)
    return metrics_from_confusion(confusion)


# 0 is black; the rest are spread around the hue circle
def default_palette(n_classes: int) -> dict[int, tuple[int, int, int]]:
    import colorsys

    palette = {0: (0, 0, 0)}
    for k in range(1, n_classes + 1):
        hue = ((k - 1) * 0.618033988749895) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
        palette[k] = (round(r * 255), round(g * 255), round(b * 255))
    return palette


def load_palette(path: str | Path) -> dict[int, tuple[int, int, int]]:
    palette = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'class,r,g,b'")
        k, r, g, b = (int(x) for x in parts)
        if not all(0 <= v <= 255 for v in (r, g, b)):
            raise PaletteError(f"{path}:{lineno}: color components must lie in 0..255")
        palette[k] = (r, g, b)
    return palette


def save_palette(path: str | Path, palette: dict[int, tuple[int, int, int]]) -> None:
    Path(path).write_text("".join(f"{k},{r},{g},{b}\n" for k, (r, g, b) in sorted(palette.items())))


def encode_ppm(rgb: np.ndarray) -> bytes:
    """Binary P6 with maxval 255 from an (H, W, 3) uint8 array."""
    h, w, _ = rgb.shape
    return f"P6 {w} {h} 255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P6":
        raise FormatError(f"not a binary PPM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    raster = data[pos:pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise FormatError("truncated PPM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)


def render_map(pred: np.ndarray, palette: dict[int, tuple[int, int, int]] | None = None) -> bytes:
    if palette is None:
        palette = default_palette(int(pred.max(initial=0)))
    top = int(pred.max(initial=0))
    missing = sorted(set(range(top + 1)) - palette.keys())
    if (pred < 0).any() or missing:
        raise PaletteError(f"palette has no color for class(es) {missing}")
    lut = np.zeros((top + 1, 3), dtype=np.uint8)
    for k in range(top + 1):
        lut[k] = palette[k]
    return encode_ppm(lut[pred])
