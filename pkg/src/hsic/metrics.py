"""Accuracy, agreement and calibration metrics, plus class-map rendering."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .data import GroundTruth
from .errors import (
    CoordinateOutOfRange,
    DegenerateMarginals,
    EmptyMatrix,
    LabelOutOfRange,
    LengthMismatch,
    MalformedHeader,
    MissingFile,
)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes (both 1-based ids)."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(preds, truths, num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    truths = np.asarray(truths, dtype=np.int64).ravel()
    if preds.size != truths.size:
        raise LengthMismatch(f"{preds.size} predictions for {truths.size} truths")
    for arr in (preds, truths):
        if arr.size and (arr.min() < 1 or arr.max() > num_classes):
            raise LabelOutOfRange(f"class ids must lie in 1..{num_classes}")
    flat = (truths - 1) * num_classes + (preds - 1)
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def _counts(cm) -> np.ndarray:
    c = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    return c.astype(np.float64)


def _exact(cm) -> list[list[int]] | None:
    """Integer counts as Python ints (for exact rational metrics), else None."""
    c = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    if c.dtype.kind in "iu" or (c.dtype.kind == "f" and np.all(np.isfinite(c)) and np.all(c == np.round(c))):
        return [[int(v) for v in row] for row in c]
    return None


# Integer matrices are evaluated with exact fractions and rounded once, so
# hand-checkable cases (e.g. AA of [[40,10],[5,45]] = 0.85) come out exact.
def _oa(cm):
    c = _exact(cm)
    if c is None:
        m = _counts(cm)
        total = m.sum()
        if total == 0:
            raise EmptyMatrix("confusion matrix is empty")
        return np.trace(m) / total
    total = sum(map(sum, c))
    if total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    return Fraction(sum(c[i][i] for i in range(len(c))), total)


def _pe(cm):
    c = _exact(cm)
    if c is None:
        m = _counts(cm)
        total = m.sum()
        if total == 0:
            raise EmptyMatrix("confusion matrix is empty")
        return (m.sum(axis=1) * m.sum(axis=0)).sum() / total**2
    total = sum(map(sum, c))
    if total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    cols = [sum(col) for col in zip(*c)]
    return Fraction(sum(sum(row) * col for row, col in zip(c, cols)), total * total)


def overall_accuracy(cm) -> float:
    """Correctly classified samples over all samples."""
    return float(_oa(cm))


def per_class_accuracy(cm) -> np.ndarray:
    """Recall per true class; NaN for classes without samples."""
    c = _counts(cm)
    rows = c.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, np.diag(c) / rows, np.nan)


def average_accuracy(cm) -> float:
    c = _exact(cm)
    if c is None:
        acc = per_class_accuracy(cm)
        present = ~np.isnan(acc)
        if not present.any():
            raise EmptyMatrix("no class has any true samples")
        return float(acc[present].mean())
    recalls = [Fraction(row[i], sum(row)) for i, row in enumerate(c) if sum(row) > 0]
    if not recalls:
        raise EmptyMatrix("no class has any true samples")
    return float(sum(recalls) / len(recalls))


def chance_agreement(cm) -> float:
    return float(_pe(cm))


def kappa(cm) -> float:
    """Cohen's kappa ``(P_o - P_e) / (1 - P_e)`` with marginal-product chance agreement."""
    p_o, p_e = _oa(cm), _pe(cm)
    if p_e == 1:
        raise DegenerateMarginals("chance agreement is 1; kappa is undefined")
    return float((p_o - p_e) / (1 - p_e))


def binary_chance_terms(tp: float, fn: float, fp: float, tn: float) -> tuple[float, float]:
    """``(P+, P-)`` for a 2x2 table, positive class first.

    ``P+`` multiplies the positive row and column marginals, ``P-`` the negative
    ones; their sum is the chance agreement.
    """
    n = tp + fn + fp + tn
    p_pos = (tp + fn) / n * (tp + fp) / n
    p_neg = (fp + tn) / n * (fn + tn) / n
    return p_pos, p_neg


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------
@dataclass
class ReliabilityBins:
    edges: np.ndarray  # (num_bins + 1,)
    counts: np.ndarray
    confidence: np.ndarray  # mean confidence per bin (NaN when empty)
    accuracy: np.ndarray  # empirical accuracy per bin (NaN when empty)

    def to_dict(self) -> dict:
        nan = lambda a: [None if np.isnan(v) else float(v) for v in a]  # noqa: E731
        return {
            "edges": [float(e) for e in self.edges],
            "counts": [int(n) for n in self.counts],
            "confidence": nan(self.confidence),
            "accuracy": nan(self.accuracy),
        }


def ece(probs, truths, num_bins: int = 15) -> tuple[float, ReliabilityBins]:
    """Expected calibration error over equal-width confidence bins on (0, 1].

    Confidence is the top probability; a prediction is correct when its argmax
    (lowest index on ties) matches the 1-based truth.
    """
    probs = np.asarray(probs, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64).ravel()
    if probs.ndim != 2 or probs.shape[0] != truths.size:
        raise LengthMismatch(f"{probs.shape[0] if probs.ndim else 0} probability rows for {truths.size} truths")
    edges = np.linspace(0.0, 1.0, num_bins + 1)
    conf = probs.max(axis=1) if probs.size else np.zeros(0)
    correct = (probs.argmax(axis=1) + 1 == truths).astype(np.float64) if probs.size else np.zeros(0)
    idx = np.clip(np.ceil(conf * num_bins).astype(np.int64) - 1, 0, num_bins - 1)
    counts = np.bincount(idx, minlength=num_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=num_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=num_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.where(counts > 0, conf_sum / counts, np.nan)
        mean_acc = np.where(counts > 0, acc_sum / counts, np.nan)
    n = truths.size
    value = float(np.abs(acc_sum - conf_sum).sum() / n) if n else 0.0
    return value, ReliabilityBins(edges, counts, mean_conf, mean_acc)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------
@dataclass
class MetricsReport:
    overall_accuracy: float
    average_accuracy: float
    kappa: float
    per_class_accuracy: list
    ece: float
    train_seconds: float | None = None
    test_seconds: float | None = None
    confusion_matrix: list = field(default_factory=list)
    per_class: list = field(default_factory=list)
    reliability: dict = field(default_factory=dict)

    TIMING_FIELDS = ("train_seconds", "test_seconds")

    @classmethod
    def build(cls, cm: ConfusionMatrix, probs, truths, class_names=None, split_counts=None,
              num_bins: int = 15, train_seconds=None, test_seconds=None) -> "MetricsReport":
        pca = per_class_accuracy(cm)
        e, bins = ece(probs, truths, num_bins)
        names = class_names or [f"class_{c}" for c in range(1, cm.num_classes + 1)]
        rows = []
        for c in range(1, cm.num_classes + 1):
            row = {"class": c, "name": names[c - 1]}
            if split_counts is not None:
                row["train"], row["val"], row["test"] = split_counts[c]
            row["accuracy"] = None if np.isnan(pca[c - 1]) else float(pca[c - 1])
            rows.append(row)
        return cls(
            overall_accuracy=overall_accuracy(cm),
            average_accuracy=average_accuracy(cm),
            kappa=kappa(cm),
            per_class_accuracy=[None if np.isnan(v) else float(v) for v in pca],
            ece=e,
            train_seconds=None if train_seconds is None else round(train_seconds, 4),
            test_seconds=None if test_seconds is None else round(test_seconds, 4),
            confusion_matrix=cm.counts.astype(int).tolist(),
            per_class=rows,
            reliability=bins.to_dict(),
        )

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            for k in self.TIMING_FIELDS:
                d.pop(k)
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# class maps
# ---------------------------------------------------------------------------
def class_map(predictions: dict[tuple[int, int], int], shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape, dtype=np.uint16)
    for (r, c), cls in predictions.items():
        if not (0 <= r < shape[0] and 0 <= c < shape[1]):
            raise CoordinateOutOfRange(f"prediction at ({r}, {c}) outside {shape[0]}x{shape[1]} raster")
        out[r, c] = cls
    return out


def write_pgm(image: np.ndarray, path, maxval: int) -> None:
    """Binary (P5) graymap; two-byte big-endian samples when ``maxval > 255``."""
    image = np.asarray(image)
    maxval = max(int(maxval), 1)
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(image.astype(dtype).tobytes())


def _pnm_tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while blob[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> tuple[np.ndarray, int]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"graymap not found: {path}")
    blob = path.read_bytes()
    (magic, w, h, maxval), pos = _pnm_tokens(blob, 4)
    if magic != b"P5":
        raise MalformedHeader(f"{path}: not a binary graymap")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    img = np.frombuffer(blob, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return img.astype(np.uint16), maxval


def palette(num_classes: int) -> np.ndarray:
    """Fixed RGB palette; index 0 (unlabeled) is black."""
    golden = 0.618033988749895
    colors = [(0, 0, 0)]
    for c in range(num_classes):
        hue = (c * golden) % 1.0
        h6 = hue * 6
        x = 1 - abs(h6 % 2 - 1)
        r, g, b = [(1, x, 0), (x, 1, 0), (0, 1, x), (0, x, 1), (x, 0, 1), (1, 0, x)][int(h6) % 6]
        colors.append((int(255 * r), int(255 * g), int(255 * b)))
    return np.array(colors, dtype=np.uint8)


def write_ppm(image: np.ndarray, path, num_classes: int) -> None:
    rgb = palette(num_classes)[np.asarray(image, dtype=np.int64)]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def render_class_map(predictions: dict[tuple[int, int], int], gt: GroundTruth, path,
                     color_path=None) -> np.ndarray:
    """Write predicted classes as a P5 graymap (0 where nothing was predicted)."""
    img = class_map(predictions, (gt.rows, gt.cols))
    write_pgm(img, path, gt.num_classes)
    if color_path is not None:
        write_ppm(img, color_path, gt.num_classes)
    return img
