"""Adam and the fixed-epoch training loop."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .autodiff import Tensor, backward
from .data import GroundTruth, SplitAssignment
from .errors import DivergedLoss, EmptySubset, ShapeMismatch
from .loss import SmoothingParams, cross_entropy, smooth_targets
from .model import ArchSpec, ModelParams, forward_tensors, init_params
from .prep import PatchBatch, PatchSource, make_batches
from .rng import splitmix64

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            **hyper,
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied in place.

    Returns ``(params, state)`` for convenience.
    """
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} does not match parameter {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.delta)).astype(p.dtype)
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 0.001
    epsilon: float = 0.1
    seed: int = 0
    precision: str = "float32"
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8
    deterministic: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    seconds: float


CSV_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds")


def write_curves(logs: Iterable[EpochLog], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for log in logs:
            w.writerow([log.epoch, repr(log.train_loss), repr(log.train_acc),
                        repr(log.val_loss), repr(log.val_acc), f"{log.seconds:.4f}"])


def read_curves(path) -> list[EpochLog]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            EpochLog(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                     float(r["val_loss"]), float(r["val_acc"]), float(r["seconds"]))
            for r in csv.DictReader(fh)
        ]


class SubsetStream:
    """Re-iterable batches of one split subset; a fresh seeded order per epoch."""

    def __init__(self, source: PatchSource, gt: GroundTruth, split: SplitAssignment, subset: str,
                 batch_size: int, shuffle: bool = False, seed: int = 0,
                 labels: np.ndarray | None = None):
        self.source = source
        self.gt = gt
        self.split = split
        self.subset = subset
        self.batch_size = batch_size
        self.shuffle = shuffle
        self.seed = seed
        self.labels = labels  # optional per-coordinate override (e.g. injected label noise)
        if len(split.coords(subset)) == 0:
            raise EmptySubset(f"subset {subset!r} is empty")

    def __len__(self) -> int:
        return len(self.split.coords(self.subset))

    def batches(self, epoch: int = 0) -> Iterator[PatchBatch]:
        _, seed = splitmix64((self.seed << 20) ^ epoch)
        for batch in make_batches(self.source, self.gt, self.split, self.subset,
                                  self.source.patch_size, self.batch_size,
                                  seed=seed, shuffle=self.shuffle):
            if self.labels is not None:
                batch.labels = self.labels[batch.coords[:, 0], batch.coords[:, 1]].astype(np.int64)
            yield batch

    def __iter__(self):
        return self.batches(0)


TargetFn = Callable[[np.ndarray, int, float, type], np.ndarray]


def smoothed(labels, num_classes, epsilon, dtype):
    return smooth_targets(labels, SmoothingParams(epsilon, num_classes), dtype=dtype)


@dataclass
class EvalResult:
    predictions: dict[tuple[int, int], int]
    mean_loss: float
    accuracy: float
    seconds: float
    probs: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    coords: np.ndarray = field(repr=False)

    @property
    def predicted(self) -> np.ndarray:
        return self.probs.argmax(axis=1) + 1


def evaluate(params: ModelParams, stream, epsilon: float = 0.0, epoch: int = 0) -> EvalResult:
    """Predict every sample of ``stream``; ties in argmax go to the lowest class.

    Loss and accuracy count only samples with a nonzero label.
    """
    start = time.perf_counter()
    batches = stream.batches(epoch) if hasattr(stream, "batches") else iter(stream)
    leaves = params.leaves(requires_grad=False)
    y = params.arch.num_classes
    probs, labels, coords = [], [], []
    loss_sum = 0.0
    for batch in batches:
        q = forward_tensors(params.arch, leaves, Tensor(batch.data.astype(params.dtype))).values
        lab = np.asarray(batch.labels)
        known = lab > 0
        if known.any():
            t = smoothed(lab[known], y, epsilon, np.float64)
            loss_sum += cross_entropy(q[known].astype(np.float64), t).item()
        probs.append(q)
        labels.append(lab)
        coords.append(batch.coords)
    if not probs:
        raise EmptySubset("evaluation stream yielded no samples")
    probs = np.concatenate(probs)
    labels = np.concatenate(labels)
    coords = np.concatenate(coords)
    pred = probs.argmax(axis=1) + 1
    known = labels > 0
    n_known = int(known.sum())
    acc = float((pred[known] == labels[known]).mean()) if n_known else float("nan")
    mean_loss = loss_sum / n_known if n_known else float("nan")
    predictions = {(int(r), int(c)): int(p) for (r, c), p in zip(coords, pred)}
    return EvalResult(predictions, mean_loss, acc, time.perf_counter() - start, probs, labels, coords)


@dataclass
class TrainResult:
    params: ModelParams
    logs: list[EpochLog]
    seconds: float


def train(arch: ArchSpec, train_stream, val_stream, config: TrainConfig,
          params: ModelParams | None = None, targets: TargetFn | None = None,
          callback: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Fixed-epoch minibatch training with the summed smoothed cross-entropy.

    ``targets(labels, Y, epsilon, dtype)`` builds the per-batch target rows
    and defaults to label smoothing. Validation runs after every epoch but
    never feeds back into training; the last epoch's weights are returned.
    """
    if len(train_stream) == 0 or len(val_stream) == 0:
        raise EmptySubset("train and validation streams must be non-empty")
    dtype = config.dtype
    params = (params or init_params(arch, config.seed, dtype=dtype)).astype(dtype)
    state = AdamState.zeros_like(params.arrays, lr=config.learning_rate, beta1=config.beta1,
                                 beta2=config.beta2, delta=config.delta)
    targets = targets or smoothed
    dropout_rng = np.random.default_rng(config.seed + 1) if arch.dropout > 0 else None
    y = arch.num_classes
    logs: list[EpochLog] = []
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        loss_sum, correct, seen = 0.0, 0, 0
        for bi, batch in enumerate(train_stream.batches(epoch)):
            leaves = params.leaves(requires_grad=True)
            probs = forward_tensors(arch, leaves, Tensor(batch.data.astype(dtype)), dropout_rng)
            loss = cross_entropy(probs, targets(batch.labels, y, config.epsilon, dtype))
            value = loss.item()
            if not np.isfinite(value):
                raise DivergedLoss(
                    f"non-finite loss at epoch {epoch}, batch {bi}",
                    state={"epoch": epoch, "batch": bi, "params": params, "adam": state},
                )
            backward(loss)
            adam_step(params.arrays, {k: t.grad for k, t in leaves.items()}, state)
            loss_sum += value
            correct += int((probs.values.argmax(axis=1) + 1 == batch.labels).sum())
            seen += len(batch)
        val = evaluate(params, val_stream, epsilon=config.epsilon)
        log = EpochLog(epoch, loss_sum / seen, correct / seen, val.mean_loss, val.accuracy,
                       time.perf_counter() - t0)
        logs.append(log)
        if callback:
            callback(log)
    return TrainResult(params, logs, time.perf_counter() - start)
