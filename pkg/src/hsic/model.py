"""The hybrid 3D/2D convolutional classifier.

Four valid 3-D convolutions grow spectral-spatial feature maps, a reshape
folds the remaining depth into channels, one 2-D convolution mixes spatial
features, and a dense head maps to class probabilities. For 15x15 patches of
15 principal components the spatial extent reaches exactly 1x1 at the 2-D
layer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NegativeExtent, PatchTooSmall, ShapeMismatch

DEFAULT_CONV3D = ((8, 5, 5, 7), (16, 5, 5, 5), (32, 3, 3, 3), (64, 3, 3, 3))
DEFAULT_CONV2D = (128, 3, 3)
DEFAULT_HIDDEN = (256, 128)


@dataclass(frozen=True)
class ArchSpec:
    conv3d_layers: tuple[tuple[int, int, int, int], ...]
    conv2d_layer: tuple[int, int, int]
    dense_units: tuple[int, ...]  # hidden widths followed by num_classes
    num_classes: int
    input_patch: tuple[int, int, int, int]  # (P, P, k, 1)
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "conv3d_layers", tuple(tuple(int(v) for v in l) for l in self.conv3d_layers))
        object.__setattr__(self, "conv2d_layer", tuple(int(v) for v in self.conv2d_layer))
        object.__setattr__(self, "dense_units", tuple(int(v) for v in self.dense_units))
        object.__setattr__(self, "input_patch", tuple(int(v) for v in self.input_patch))
        if not self.dense_units or self.dense_units[-1] != self.num_classes:
            raise ShapeMismatch("the last dense width must equal num_classes")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {k: (list(map(list, v)) if k == "conv3d_layers" else list(v) if isinstance(v, tuple) else v)
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            conv3d_layers=tuple(tuple(l) for l in d["conv3d_layers"]),
            conv2d_layer=tuple(d["conv2d_layer"]),
            dense_units=tuple(d["dense_units"]),
            num_classes=int(d["num_classes"]),
            input_patch=tuple(d["input_patch"]),
            dropout=float(d.get("dropout", 0.0)),
        )


def infer_shapes(arch: ArchSpec) -> list[tuple[int, ...]]:
    """Per-sample output shape of every stage, starting with the input patch."""
    h, w, d, c = arch.input_patch
    shapes = [(h, w, d, c)]

    def shrink(extent, k, where):
        out = extent - k + 1
        if out < 1:
            raise NegativeExtent(f"{where}: kernel extent {k} exceeds input extent {extent}")
        return out

    for i, (f, k1, k2, k3) in enumerate(arch.conv3d_layers, 1):
        where = f"3-D layer {i}"
        h, w, d, c = shrink(h, k1, where), shrink(w, k2, where), shrink(d, k3, where), f
        shapes.append((h, w, d, c))
    c = d * c
    shapes.append((h, w, c))
    f, k1, k2 = arch.conv2d_layer
    h, w, c = shrink(h, k1, "2-D layer"), shrink(w, k2, "2-D layer"), f
    shapes.append((h, w, c))
    shapes.append((h * w * c,))
    for units in arch.dense_units:
        shapes.append((units,))
    return shapes


def build_default_arch(num_classes: int, patch_size: int = 15, num_components: int = 15,
                       dropout: float = 0.0) -> ArchSpec:
    arch = ArchSpec(
        conv3d_layers=DEFAULT_CONV3D,
        conv2d_layer=DEFAULT_CONV2D,
        dense_units=DEFAULT_HIDDEN + (num_classes,),
        num_classes=num_classes,
        input_patch=(patch_size, patch_size, num_components, 1),
        dropout=dropout,
    )
    try:
        infer_shapes(arch)
    except NegativeExtent as exc:
        raise PatchTooSmall(
            f"a {patch_size}x{patch_size}x{num_components} patch is too small for the kernel stack ({exc})"
        ) from None
    return arch


def param_shapes(arch: ArchSpec) -> dict[str, tuple[int, ...]]:
    shapes = infer_shapes(arch)
    out: dict[str, tuple[int, ...]] = {}
    c_in = arch.input_patch[3]
    n3 = len(arch.conv3d_layers)
    for i, (f, k1, k2, k3) in enumerate(arch.conv3d_layers, 1):
        out[f"conv3d_{i}.kernel"] = (f, k1, k2, k3, c_in)
        out[f"conv3d_{i}.bias"] = (f,)
        c_in = f
    f, k1, k2 = arch.conv2d_layer
    c_in = shapes[n3 + 1][2]
    idx = n3 + 1
    out[f"conv2d_{idx}.kernel"] = (f, k1, k2, c_in)
    out[f"conv2d_{idx}.bias"] = (f,)
    fan = shapes[n3 + 3][0]
    for units in arch.dense_units:
        idx += 1
        out[f"dense_{idx}.weights"] = (fan, units)
        out[f"dense_{idx}.bias"] = (units,)
        fan = units
    return out


def param_count(arch: ArchSpec) -> int:
    return sum(math.prod(s) for s in param_shapes(arch).values())


@dataclass
class ModelParams:
    arch: ArchSpec
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.arch, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def leaves(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}


def init_params(arch: ArchSpec, seed: int = 0, dtype=np.float32) -> ModelParams:
    """He-uniform conv and hidden dense weights, Glorot-uniform output layer, zero biases."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(arch)
    output_weights = [k for k in shapes if k.endswith(".weights")][-1]
    arrays = {}
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape, dtype=dtype)
            continue
        if name.endswith(".weights"):
            fan_in, fan_out = shape
        else:
            fan_in, fan_out = math.prod(shape[1:]), shape[0]
        if name == output_weights:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
        else:
            bound = math.sqrt(6.0 / fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelParams(arch, arrays)


def forward_tensors(arch: ArchSpec, leaves: dict[str, Tensor], x: Tensor,
                    dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Run the network on tape tensors; returns (batch, Y) softmax probabilities.

    Dropout on hidden dense outputs is applied only when ``dropout_rng`` is
    given and ``arch.dropout > 0``.
    """
    expected = arch.input_patch
    if x.ndim != 5 or x.shape[1:] != expected:
        raise ShapeMismatch(f"expected patches of shape (batch, {expected}), got {x.shape}")
    h = x
    n3 = len(arch.conv3d_layers)
    for i in range(1, n3 + 1):
        h = ad.relu(ad.conv3d(h, leaves[f"conv3d_{i}.kernel"], leaves[f"conv3d_{i}.bias"]))
    b, hh, ww, dd, cc = h.shape
    h = ad.reshape(h, (b, hh, ww, dd * cc))
    idx = n3 + 1
    h = ad.relu(ad.conv2d(h, leaves[f"conv2d_{idx}.kernel"], leaves[f"conv2d_{idx}.bias"]))
    h = ad.flatten(h)
    n_dense = len(arch.dense_units)
    for j in range(n_dense):
        idx += 1
        h = ad.dense(h, leaves[f"dense_{idx}.weights"], leaves[f"dense_{idx}.bias"])
        if j < n_dense - 1:
            h = ad.relu(h)
            if dropout_rng is not None and arch.dropout > 0:
                keep = dropout_rng.random(h.shape) >= arch.dropout
                h = ad.mul(h, keep.astype(h.dtype) / (1.0 - arch.dropout))
    return ad.softmax(h)


def forward(params: ModelParams, data) -> np.ndarray:
    """Class probabilities for a batch (no gradient tracking)."""
    values = data.data if hasattr(data, "data") else data
    x = Tensor(np.asarray(values, dtype=params.dtype))
    return forward_tensors(params.arch, params.leaves(requires_grad=False), x).values
