"""End-to-end experiment steps shared by the command line and the demos."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import load_tensors, save_tensors
from .config import ExperimentConfig
from .data import GroundTruth, HsiCube, SplitAssignment, load_cube, load_ground_truth, stratified_split
from .errors import DimensionMismatch, ManifestMismatch
from .metrics import MetricsReport, confusion
from .model import ArchSpec, ModelParams, build_default_arch, param_shapes
from .prep import PatchSource, PcaModel, apply_pca, fit_pca, load_pca, save_pca, standardize_bands
from .train import EvalResult, SubsetStream, TrainConfig, TrainResult, evaluate, train

MANIFEST_VERSION = 1


@dataclass
class Prepared:
    cube: HsiCube  # PCA-reduced
    gt: GroundTruth
    split: SplitAssignment
    pca: PcaModel
    source: PatchSource


def prepare(cfg: ExperimentConfig, cube: HsiCube | None = None, gt: GroundTruth | None = None,
            pca: PcaModel | None = None) -> Prepared:
    """Load (unless given), standardize, reduce with PCA, split, and pad for patches."""
    cube = cube if cube is not None else load_cube(cfg.cube_path)
    gt = gt if gt is not None else load_ground_truth(cfg.ground_truth_path)
    if (cube.rows, cube.cols) != (gt.rows, gt.cols):
        raise DimensionMismatch(
            f"cube is {cube.rows}x{cube.cols} but ground truth is {gt.rows}x{gt.cols}"
        )
    split = stratified_split(gt, cfg.ratios, cfg.seed)
    std = standardize_bands(cube)
    if pca is None:
        coords = split.train if cfg.pca_fit == "train" else None
        pca = fit_pca(std, cfg.num_components, coords)
    reduced = apply_pca(std, pca)
    dtype = np.float64 if cfg.precision == "float64" else np.float32
    return Prepared(reduced, gt, split, pca, PatchSource(reduced, cfg.patch_size, dtype=dtype))


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
        epsilon=cfg.epsilon, seed=cfg.seed, precision=cfg.precision, beta1=cfg.beta1,
        beta2=cfg.beta2, delta=cfg.adam_delta, deterministic=cfg.deterministic,
    )


def streams(cfg: ExperimentConfig, prep: Prepared, train_labels: np.ndarray | None = None):
    tr = SubsetStream(prep.source, prep.gt, prep.split, "train", cfg.batch_size,
                      shuffle=True, seed=cfg.seed, labels=train_labels)
    va = SubsetStream(prep.source, prep.gt, prep.split, "val", cfg.batch_size)
    te = SubsetStream(prep.source, prep.gt, prep.split, "test", cfg.batch_size)
    return tr, va, te


def arch_for(cfg: ExperimentConfig, gt: GroundTruth) -> ArchSpec:
    return build_default_arch(gt.num_classes, cfg.patch_size, cfg.num_components, cfg.dropout)


def fit(cfg: ExperimentConfig, prep: Prepared, train_labels: np.ndarray | None = None,
        callback=None) -> TrainResult:
    tr, va, _ = streams(cfg, prep, train_labels)
    return train(arch_for(cfg, prep.gt), tr, va, train_config(cfg), callback=callback)


def assess(cfg: ExperimentConfig, params: ModelParams, prep: Prepared,
           train_seconds: float | None = None) -> tuple[MetricsReport, EvalResult]:
    """Test-set metrics with a per-class table of split counts and accuracies."""
    _, _, te = streams(cfg, prep)
    result = evaluate(params, te)
    y = prep.gt.num_classes
    cm = confusion(result.predicted, result.labels, y)
    report = MetricsReport.build(
        cm, result.probs, result.labels, list(prep.gt.class_names),
        prep.split.counts_by_class(prep.gt), cfg.ece_bins,
        train_seconds=train_seconds, test_seconds=result.seconds,
    )
    return report, result


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------
def save_run(out_dir, cfg: ExperimentConfig, result: TrainResult, prep: Prepared) -> Path:
    """Checkpoint, PCA model and manifest; returns the checkpoint header path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = save_tensors(result.params.arrays, out_dir / "checkpoint.json")
    save_pca(prep.pca, out_dir / "pca.json")
    manifest = {
        "version": MANIFEST_VERSION,
        "arch": result.params.arch.to_dict(),
        "epsilon": cfg.epsilon,
        "seed": cfg.seed,
        "precision": cfg.precision,
        "preprocessing": cfg.preprocessing(),
        "config_hash": cfg.fingerprint(),
        "checkpoint": ckpt.name,
        "pca": "pca.json",
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return ckpt


def load_run(checkpoint_header, cfg: ExperimentConfig) -> tuple[ModelParams, PcaModel | None, dict]:
    """Load a checkpoint and refuse it if its manifest disagrees with ``cfg``."""
    checkpoint_header = Path(checkpoint_header)
    manifest_path = checkpoint_header.parent / "manifest.json"
    if not manifest_path.is_file():
        raise ManifestMismatch(f"no manifest.json next to {checkpoint_header}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    expected = cfg.preprocessing()
    for key, value in expected.items():
        if manifest.get("preprocessing", {}).get(key) != value:
            raise ManifestMismatch(
                f"checkpoint was trained with {key}={manifest.get('preprocessing', {}).get(key)!r}, "
                f"config has {value!r}"
            )
    arch = ArchSpec.from_dict(manifest["arch"])
    arrays, _ = load_tensors(checkpoint_header)
    shapes = param_shapes(arch)
    if set(arrays) != set(shapes) or any(arrays[k].shape != tuple(s) for k, s in shapes.items()):
        raise ManifestMismatch("checkpoint tensors do not match the manifest architecture")
    params = ModelParams(arch, {k: arrays[k] for k in shapes})
    pca_path = checkpoint_header.parent / manifest.get("pca", "pca.json")
    pca = load_pca(pca_path) if pca_path.is_file() else None
    return params, pca, manifest
