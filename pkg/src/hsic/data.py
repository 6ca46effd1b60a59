"""Hyperspectral cube and ground-truth containers, their raw-binary file format,
and deterministic stratified splitting.

On disk a raster is a small JSON header next to a raw payload::

    {"rows": 145, "cols": 145, "bands": 200, "dtype": "f32",
     "order": "bsq", "byte_order": "little", "payload": "ip.f32"}

Cube payloads are little-endian float32 in band-sequential order; ground truth
uses ``"dtype": "u16"``, ``"bands": 1`` and adds ``num_classes`` and
``class_names``. In memory a cube is held pixel-interleaved as ``(M, N, B)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadRatios,
    EmptyClass,
    LabelOutOfRange,
    MalformedHeader,
    MissingFile,
    NonFiniteValue,
    SizeMismatch,
)
from .rng import Xoshiro256, shuffle

SUBSETS = ("train", "val", "test")
PROTOCOL_RATIOS = (0.25, 0.25, 0.5)


@dataclass(frozen=True)
class HsiCube:
    values: np.ndarray  # (rows, cols, bands) float32
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or min(v.shape) < 1:
            raise SizeMismatch(f"cube must be a non-empty 3-D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteValue("cube contains NaN or infinite values")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class GroundTruth:
    labels: np.ndarray  # (rows, cols) uint16, 0 = unlabeled
    num_classes: int
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise SizeMismatch(f"ground truth must be 2-D, got shape {lab.shape}")
        if self.num_classes < 1:
            raise MalformedHeader("num_classes must be >= 1")
        if lab.size and (lab.min() < 0 or lab.max() > self.num_classes):
            raise LabelOutOfRange(
                f"label {int(lab.max())} exceeds num_classes={self.num_classes}"
            )
        lab = np.ascontiguousarray(lab, dtype=np.uint16)
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        names = tuple(self.class_names) or tuple(
            f"class_{c}" for c in range(1, self.num_classes + 1)
        )
        if len(names) != self.num_classes:
            raise MalformedHeader(
                f"{len(names)} class names given for {self.num_classes} classes"
            )
        object.__setattr__(self, "class_names", names)

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    @property
    def num_labeled(self) -> int:
        return int(np.count_nonzero(self.labels))


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------
def _read_header(header_path) -> tuple[dict, Path]:
    header_path = Path(header_path)
    if not header_path.is_file():
        raise MissingFile(f"header not found: {header_path}")
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"{header_path}: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeader(f"{header_path}: header must be a JSON object")
    for key in ("rows", "cols", "bands", "dtype", "payload"):
        if key not in header:
            raise MalformedHeader(f"{header_path}: missing field {key!r}")
    for key in ("rows", "cols", "bands"):
        val = header[key]
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise MalformedHeader(f"{header_path}: {key} must be a positive integer")
    if header.get("byte_order", "little") != "little":
        raise MalformedHeader(f"{header_path}: only little-endian payloads are supported")
    if header.get("order", "bsq") != "bsq":
        raise MalformedHeader(f"{header_path}: only band-sequential order is supported")
    payload = header_path.parent / header["payload"]
    if not payload.is_file():
        raise MissingFile(f"payload not found: {payload}")
    return header, payload


def _read_payload(payload: Path, dtype: str, count: int) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    nbytes = payload.stat().st_size
    if nbytes != itemsize * count:
        raise SizeMismatch(
            f"{payload}: expected {itemsize * count} bytes, found {nbytes}"
        )
    return np.fromfile(payload, dtype=dtype, count=count)


def load_cube(header_path) -> HsiCube:
    """Read a band-sequential float32 cube described by a JSON header."""
    header, payload = _read_header(header_path)
    if header["dtype"] != "f32":
        raise MalformedHeader(f"cube dtype must be 'f32', got {header['dtype']!r}")
    m, n, b = header["rows"], header["cols"], header["bands"]
    flat = _read_payload(payload, "<f4", m * n * b)
    if not np.all(np.isfinite(flat)):
        raise NonFiniteValue(f"{payload}: NaN or infinite values present")
    values = flat.reshape(b, m, n).transpose(1, 2, 0).astype(np.float32)
    return HsiCube(values, name=str(header.get("name", Path(header_path).stem)))


def save_cube(cube: HsiCube, header_path, payload_name: str | None = None) -> Path:
    header_path = Path(header_path)
    payload_name = payload_name or header_path.with_suffix(".f32").name
    header = {
        "rows": cube.rows,
        "cols": cube.cols,
        "bands": cube.bands,
        "dtype": "f32",
        "order": "bsq",
        "byte_order": "little",
        "payload": payload_name,
        "name": cube.name,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    bsq = np.ascontiguousarray(cube.values.transpose(2, 0, 1), dtype="<f4")
    bsq.tofile(header_path.parent / payload_name)
    header_path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return header_path


def load_ground_truth(header_path) -> GroundTruth:
    """Read a uint16 label raster with ``num_classes`` and ``class_names``."""
    header, payload = _read_header(header_path)
    if header["dtype"] != "u16" or header["bands"] != 1:
        raise MalformedHeader("ground truth must have dtype 'u16' and a single band")
    y = header.get("num_classes")
    if not isinstance(y, int) or y < 1:
        raise MalformedHeader("ground truth header needs num_classes >= 1")
    m, n = header["rows"], header["cols"]
    labels = _read_payload(payload, "<u2", m * n).reshape(m, n)
    if labels.size and int(labels.max()) > y:
        raise LabelOutOfRange(f"label {int(labels.max())} exceeds num_classes={y}")
    return GroundTruth(labels, y, tuple(header.get("class_names", ())))


def save_ground_truth(gt: GroundTruth, header_path, payload_name: str | None = None) -> Path:
    header_path = Path(header_path)
    payload_name = payload_name or header_path.with_suffix(".u16").name
    header = {
        "rows": gt.rows,
        "cols": gt.cols,
        "bands": 1,
        "dtype": "u16",
        "order": "bsq",
        "byte_order": "little",
        "payload": payload_name,
        "num_classes": gt.num_classes,
        "class_names": list(gt.class_names),
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(gt.labels, dtype="<u2").tofile(header_path.parent / payload_name)
    header_path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return header_path


def class_histogram(gt: GroundTruth) -> list[tuple[int, int]]:
    counts = np.bincount(gt.labels.ravel(), minlength=gt.num_classes + 1)
    return [(c, int(counts[c])) for c in range(1, gt.num_classes + 1)]


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------
def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Per-class subset sizes: train rounds down, validation rounds up when it fits.

    >>> split_counts(46, (0.25, 0.25, 0.5))
    (11, 12, 23)
    """
    r_train, r_val, _ = ratios
    # the 1e-9 nudge keeps exact products (e.g. 20 * 0.25) from drifting across an integer
    n_train = math.floor(n * r_train + 1e-9)
    n_val = math.ceil(n * r_val - 1e-9)
    if n_train + n_val > n:
        n_val = math.floor(n * r_val + 1e-9)
    return n_train, n_val, n - n_train - n_val


def _check_ratios(ratios) -> tuple[float, float, float]:
    try:
        r = tuple(float(x) for x in ratios)
    except (TypeError, ValueError):
        raise BadRatios(f"ratios must be three numbers, got {ratios!r}") from None
    if len(r) != 3 or any(not math.isfinite(x) or x < 0 for x in r):
        raise BadRatios(f"ratios must be three non-negative numbers, got {ratios!r}")
    if abs(sum(r) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must sum to 1, got {sum(r)}")
    return r


@dataclass(frozen=True)
class SplitAssignment:
    """Labeled pixel coordinates per subset, each held in row-major order."""

    train: np.ndarray  # (n, 2) int
    val: np.ndarray
    test: np.ndarray
    seed: int
    ratios: tuple[float, float, float] = PROTOCOL_RATIOS
    shape: tuple[int, int] | None = field(default=None, compare=False)

    def coords(self, subset: str) -> np.ndarray:
        if subset not in SUBSETS:
            raise ValueError(f"subset must be one of {SUBSETS}, got {subset!r}")
        return getattr(self, subset)

    @property
    def assignment(self) -> dict[tuple[int, int], str]:
        out = {}
        for name in SUBSETS:
            for r, c in self.coords(name):
                out[(int(r), int(c))] = name
        return out

    def counts_by_class(self, gt: GroundTruth) -> dict[int, tuple[int, int, int]]:
        per = {}
        for c in range(1, gt.num_classes + 1):
            per[c] = tuple(
                int(np.count_nonzero(gt.labels[s[:, 0], s[:, 1]] == c)) if len(s) else 0
                for s in (self.train, self.val, self.test)
            )
        return per

    def to_lines(self) -> list[str]:
        rows = []
        for name in SUBSETS:
            rows.extend((int(r), int(c), name) for r, c in self.coords(name))
        rows.sort()
        return [f"{r},{c},{s}" for r, c, s in rows]


def _row_major(coords: Iterable[tuple[int, int]]) -> np.ndarray:
    arr = np.array(sorted(coords), dtype=np.int64).reshape(-1, 2)
    return arr


def stratified_split(gt: GroundTruth, ratios=PROTOCOL_RATIOS, seed: int = 0) -> SplitAssignment:
    """Partition labeled pixels per class into train/val/test.

    Classes are visited in increasing id order; each class's pixels (row-major)
    are Fisher-Yates shuffled with one xoshiro256** stream seeded by ``seed``,
    then cut into consecutive train, val and test runs sized by
    :func:`split_counts`.
    """
    ratios = _check_ratios(ratios)
    rng = Xoshiro256(seed)
    parts = {name: [] for name in SUBSETS}
    for c, n_c in class_histogram(gt):
        if n_c == 0:
            raise EmptyClass(f"class {c} ({gt.class_names[c - 1]}) has no labeled pixels")
        rr, cc = np.nonzero(gt.labels == c)
        pixels = list(zip(rr.tolist(), cc.tolist()))
        shuffle(pixels, rng)
        n_train, n_val, _ = split_counts(n_c, ratios)
        parts["train"].extend(pixels[:n_train])
        parts["val"].extend(pixels[n_train:n_train + n_val])
        parts["test"].extend(pixels[n_train + n_val:])
    return SplitAssignment(
        *(_row_major(parts[name]) for name in SUBSETS),
        seed=seed,
        ratios=ratios,
        shape=(gt.rows, gt.cols),
    )


def save_split(split: SplitAssignment, path) -> None:
    Path(path).write_text("\n".join(split.to_lines()) + "\n", encoding="utf-8")


def load_split(path, seed: int = 0, ratios=PROTOCOL_RATIOS) -> SplitAssignment:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"split file not found: {path}")
    parts = {name: [] for name in SUBSETS}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            r, c, s = line.split(",")
            parts[s.strip()].append((int(r), int(c)))
        except (ValueError, KeyError):
            raise MalformedHeader(f"{path}:{lineno}: bad split line {line!r}") from None
    return SplitAssignment(
        *(_row_major(parts[name]) for name in SUBSETS), seed=seed, ratios=tuple(ratios)
    )


def describe_header(header_path) -> dict:
    """Header fields plus payload size, without reading the payload."""
    header, payload = _read_header(header_path)
    info = dict(header)
    info["payload_bytes"] = os.path.getsize(payload)
    return info
