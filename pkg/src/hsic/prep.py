"""Band standardization, PCA spectral reduction and patch batching."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import GroundTruth, HsiCube, SplitAssignment
from .errors import (
    CoordinateOutOfRange,
    DimensionMismatch,
    EmptySubset,
    EvenPatch,
    KTooLarge,
    MalformedHeader,
    MissingFile,
    SizeMismatch,
)
from .rng import permutation


def standardize_bands(cube: HsiCube) -> HsiCube:
    """Zero-mean, unit-variance (population) scaling of every band.

    Constant bands map to zeros.
    """
    x = cube.values.astype(np.float64)
    mean = x.mean(axis=(0, 1))
    std = x.std(axis=(0, 1))
    safe = np.where(std > 0, std, 1.0)
    out = np.where(std > 0, (x - mean) / safe, 0.0)
    return HsiCube(out.astype(cube.values.dtype), name=cube.name)


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (bands,)
    components: np.ndarray  # (k, bands), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def bands(self) -> int:
        return self.components.shape[1]

    def transform(self, pixels: np.ndarray) -> np.ndarray:
        """Project ``(..., bands)`` spectra onto the components (float64)."""
        return (np.asarray(pixels, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, scores: np.ndarray) -> np.ndarray:
        return np.asarray(scores, dtype=np.float64) @ self.components + self.mean


def _sign_normalize(components: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, which gives the lowest-index tie break
    lead = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), lead])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def fit_pca(cube: HsiCube, k: int, coords: np.ndarray | None = None) -> PcaModel:
    """Top-``k`` eigenvectors of the band covariance.

    By default every pixel of the scene contributes; pass ``coords`` (an
    ``(n, 2)`` array of row/col pairs) to fit on a subset such as the
    training pixels only.
    """
    b = cube.bands
    if not 1 <= k <= b:
        raise KTooLarge(f"k must lie in [1, {b}], got {k}")
    if coords is None:
        x = cube.values.reshape(-1, b).astype(np.float64)
    else:
        coords = np.asarray(coords)
        x = cube.values[coords[:, 0], coords[:, 1]].astype(np.float64)
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / len(xc)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    components = _sign_normalize(evecs[:, order].T)
    variance = np.clip(evals[order], 0.0, None)
    return PcaModel(mean, np.ascontiguousarray(components), variance)


def apply_pca(cube: HsiCube, model: PcaModel) -> HsiCube:
    if cube.bands != model.bands:
        raise DimensionMismatch(
            f"cube has {cube.bands} bands but the PCA model expects {model.bands}"
        )
    out = model.transform(cube.values)
    return HsiCube(out.astype(cube.values.dtype), name=cube.name)


def save_pca(model: PcaModel, header_path) -> None:
    """Header JSON plus float64 little-endian payload: mean, then components."""
    header_path = Path(header_path)
    payload = header_path.with_suffix(".f64")
    header = {
        "k": model.k,
        "bands": model.bands,
        "dtype": "f64",
        "byte_order": "little",
        "payload": payload.name,
        "explained_variance": [float(v) for v in model.explained_variance],
    }
    blob = np.concatenate([model.mean, model.components.ravel()]).astype("<f8")
    blob.tofile(payload)
    header_path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")


def load_pca(header_path) -> PcaModel:
    header_path = Path(header_path)
    if not header_path.is_file():
        raise MissingFile(f"PCA header not found: {header_path}")
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
        k, b = int(header["k"]), int(header["bands"])
        payload = header_path.parent / header["payload"]
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedHeader(f"{header_path}: {exc}") from None
    if not payload.is_file():
        raise MissingFile(f"PCA payload not found: {payload}")
    blob = np.fromfile(payload, dtype="<f8")
    if blob.size != b + k * b:
        raise SizeMismatch(f"{payload}: expected {b + k * b} values, found {blob.size}")
    variance = np.asarray(header.get("explained_variance", [np.nan] * k), dtype=np.float64)
    return PcaModel(blob[:b].copy(), blob[b:].reshape(k, b).copy(), variance)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------
def _check_patch_size(patch_size: int) -> int:
    if patch_size < 1 or patch_size % 2 == 0:
        raise EvenPatch(f"patch size must be a positive odd number, got {patch_size}")
    return patch_size // 2


def pad_cube(values: np.ndarray, patch_size: int) -> np.ndarray:
    """Mirror-pad the spatial axes; the edge pixel itself is not repeated."""
    h = _check_patch_size(patch_size)
    return np.pad(values, ((h, h), (h, h), (0, 0)), mode="reflect")


def extract_patch(cube: HsiCube, row: int, col: int, patch_size: int) -> np.ndarray:
    """``P x P x bands`` window centred on ``(row, col)`` with mirrored borders."""
    _check_patch_size(patch_size)
    if not (0 <= row < cube.rows and 0 <= col < cube.cols):
        raise CoordinateOutOfRange(f"({row}, {col}) outside {cube.rows}x{cube.cols} raster")
    padded = pad_cube(cube.values, patch_size)
    return padded[row:row + patch_size, col:col + patch_size].copy()


@dataclass
class PatchBatch:
    data: np.ndarray  # (batch, P, P, k, 1)
    labels: np.ndarray  # (batch,) in 1..Y
    coords: np.ndarray  # (batch, 2)

    def __len__(self) -> int:
        return len(self.labels)


class PatchSource:
    """Pads a reduced cube once and gathers patches for arbitrary coordinates."""

    def __init__(self, cube: HsiCube, patch_size: int, dtype=np.float32):
        _check_patch_size(patch_size)
        self.patch_size = patch_size
        self.shape = (cube.rows, cube.cols)
        self._padded = pad_cube(cube.values.astype(dtype), patch_size)
        # windows[r, c] has shape (bands, P, P)
        self._windows = sliding_window_view(self._padded, (patch_size, patch_size), axis=(0, 1))

    def gather(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
        if len(coords) and (
            coords.min() < 0 or coords[:, 0].max() >= self.shape[0] or coords[:, 1].max() >= self.shape[1]
        ):
            raise CoordinateOutOfRange("patch coordinates outside the raster")
        w = self._windows[coords[:, 0], coords[:, 1]]  # (n, bands, P, P)
        return np.ascontiguousarray(w.transpose(0, 2, 3, 1))[..., None]


def make_batches(
    cube: HsiCube | PatchSource,
    gt: GroundTruth,
    split: SplitAssignment,
    subset: str,
    patch_size: int,
    batch_size: int,
    seed: int = 0,
    shuffle: bool = True,
    coords: np.ndarray | None = None,
) -> Iterator[PatchBatch]:
    """Yield ``ceil(n / batch_size)`` batches covering every subset pixel once.

    Without shuffling, pixels come in row-major order. With shuffling the order
    is a Fisher-Yates permutation from the portable generator seeded by
    ``seed``. ``coords`` overrides the split lookup (e.g. to predict unlabeled
    pixels); their labels are then read as-is from ``gt`` and may be 0.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    source = cube if isinstance(cube, PatchSource) else PatchSource(cube, patch_size)
    if coords is None:
        coords = split.coords(subset)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    if len(coords) == 0:
        raise EmptySubset(f"subset {subset!r} has no pixels")
    if shuffle:
        coords = coords[np.asarray(permutation(len(coords), seed), dtype=np.int64)]
    labels = gt.labels[coords[:, 0], coords[:, 1]].astype(np.int64)
    for start in range(0, len(coords), batch_size):
        sl = slice(start, start + batch_size)
        yield PatchBatch(source.gather(coords[sl]), labels[sl], coords[sl])


def batch_sizes(n: int, batch_size: int) -> Sequence[int]:
    full, rest = divmod(n, batch_size)
    return [batch_size] * full + ([rest] if rest else [])
