"""Experiment configuration: a single JSON document with protocol defaults."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, MissingFile

PCA_FIT_MODES = ("scene", "train")


@dataclass
class ExperimentConfig:
    cube: str = ""
    ground_truth: str = ""
    num_components: int = 15
    patch_size: int = 15
    ratios: list[float] = field(default_factory=lambda: [0.25, 0.25, 0.5])
    epsilon: float = 0.1
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 0.001
    seed: int = 0
    precision: str = "float32"
    out_dir: str = "runs/default"
    pca_fit: str = "scene"
    dropout: float = 0.0
    ece_bins: int = 15
    beta1: float = 0.9
    beta2: float = 0.999
    adam_delta: float = 1e-8
    deterministic: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, name, why):
            if not cond:
                raise ConfigError(f"{name}: {why} (got {getattr(self, name)!r})")

        ints = ("num_components", "patch_size", "epochs", "batch_size", "seed", "ece_bins")
        for name in ints:
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool), name, "must be an integer")
        floats = ("epsilon", "learning_rate", "dropout", "beta1", "beta2", "adam_delta")
        for name in floats:
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
                 name, "must be a finite number")
        need(self.num_components >= 1, "num_components", "must be >= 1")
        need(self.patch_size >= 1 and self.patch_size % 2 == 1, "patch_size", "must be a positive odd integer")
        need(0.0 <= self.epsilon <= 1.0, "epsilon", "must lie in [0, 1]")
        need(self.epochs >= 1, "epochs", "must be >= 1")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.learning_rate >= 0, "learning_rate", "must be non-negative")
        need(0.0 <= self.dropout < 1.0, "dropout", "must lie in [0, 1)")
        need(self.ece_bins >= 1, "ece_bins", "must be >= 1")
        need(self.precision in ("float32", "float64"), "precision", "must be 'float32' or 'float64'")
        need(self.pca_fit in PCA_FIT_MODES, "pca_fit", f"must be one of {PCA_FIT_MODES}")
        need(isinstance(self.deterministic, bool), "deterministic", "must be true or false")
        r = self.ratios
        need(isinstance(r, (list, tuple)) and len(r) == 3
             and all(isinstance(x, (int, float)) and not isinstance(x, bool) and x >= 0 for x in r)
             and abs(sum(r) - 1.0) <= 1e-9,
             "ratios", "must be three non-negative numbers summing to 1")
        self.ratios = [float(x) for x in r]

    # -- file form ---------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown config field")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if base_dir is not None:
            cfg.base_dir = Path(base_dir)
        return cfg

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        """Read a config file; ``overrides`` (e.g. from flags) take precedence."""
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config: file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data, base_dir=path.parent)

    # -- resolved paths and fingerprints -----------------------------------
    def resolve(self, p: str) -> Path:
        path = Path(p)
        base = getattr(self, "base_dir", None)
        return path if path.is_absolute() or base is None else base / path

    @property
    def cube_path(self) -> Path:
        if not self.cube:
            raise MissingFile("config names no cube header")
        return self.resolve(self.cube)

    @property
    def ground_truth_path(self) -> Path:
        if not self.ground_truth:
            raise MissingFile("config names no ground-truth header")
        return self.resolve(self.ground_truth)

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.out_dir)

    def preprocessing(self) -> dict:
        """Settings that must agree between training and evaluation."""
        return {
            "num_components": self.num_components,
            "patch_size": self.patch_size,
            "ratios": self.ratios,
            "seed": self.seed,
            "pca_fit": self.pca_fit,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()
