"""Label-smoothing regularized hybrid 3D/2D CNN for hyperspectral image classification.

Everything runs on numpy: a small reverse-mode autodiff engine carries the
network, and the data, preprocessing, training and metrics layers around it
are plain functions over dataclasses.
"""

from .autodiff import Tensor, backward, gradcheck
from .config import ExperimentConfig
from .data import (
    GroundTruth,
    HsiCube,
    SplitAssignment,
    class_histogram,
    load_cube,
    load_ground_truth,
    save_cube,
    save_ground_truth,
    stratified_split,
)
from .loss import SmoothingParams, cross_entropy, decomposed_loss, loss_grad_logits, smooth_targets
from .metrics import average_accuracy, confusion, ece, kappa, overall_accuracy
from .model import ArchSpec, ModelParams, build_default_arch, forward, infer_shapes, init_params
from .prep import PcaModel, apply_pca, extract_patch, fit_pca, make_batches, standardize_bands
from .synthetic import gaussian_scene, inject_label_noise
from .train import AdamState, TrainConfig, adam_step, evaluate, train

__version__ = "0.1.0"
