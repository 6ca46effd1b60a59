"""A small dense-tensor engine with reverse-mode differentiation.

Only the operations the hybrid network needs are provided: valid stride-1
3-D and 2-D cross-correlation, dense layers, ReLU, softmax over the last axis,
reshape, and a few elementwise helpers used by tests. Every operation records
its parents and a vector-Jacobian closure on the output tensor; :func:`backward`
orders the recorded graph into a :class:`Tape` and replays it in reverse.

Precision follows the arrays: float32 for training, float64 for gradient
checks.
"""

from __future__ import annotations

import contextlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    AlreadyBackpropagated,
    CountMismatch,
    KernelTooLarge,
    MalformedHeader,
    MissingFile,
    NotScalar,
    ShapeMismatch,
    SizeMismatch,
)

# op name -> factor applied to the gradients that op propagates; test hook only
_GRAD_CORRUPTION: dict[str, float] = {}


@contextlib.contextmanager
def corrupted_gradient(op: str, factor: float = 1.01):
    """Scale every gradient emitted by ``op`` inside the block (for self-tests)."""
    previous = _GRAD_CORRUPTION.get(op)
    _GRAD_CORRUPTION[op] = factor
    try:
        yield
    finally:
        if previous is None:
            _GRAD_CORRUPTION.pop(op, None)
        else:
            _GRAD_CORRUPTION[op] = previous


_local = threading.local()


@contextlib.contextmanager
def recording_activation_pattern():
    """Collect the on/off mask of every ReLU evaluated inside the block."""
    previous = getattr(_local, "pattern", None)
    _local.pattern = masks = []
    try:
        yield masks
    finally:
        _local.pattern = previous


class Tensor:
    """An n-d array plus what is needed to differentiate through it."""

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        arr = np.asarray(values, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.values = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self.op = "leaf"
        self._leaf = True
        self._done = False

    @classmethod
    def _from_op(cls, values, parents, vjp, op: str) -> "Tensor":
        out = cls(values)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._vjp = vjp
            out._leaf = False
        out.op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def is_leaf(self) -> bool:
        return self._leaf

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op!r})"

    # elementwise helpers ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other, self.dtype), -1.0))

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(values, dtype=None) -> Tensor:
    return Tensor(np.array(values, dtype=dtype), requires_grad=True)


# ---------------------------------------------------------------------------
# tape and backward pass
# ---------------------------------------------------------------------------
@dataclass
class Tape:
    """Operations reachable from a root, in topological (execution) order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires it, from a scalar loss.

    Gradients accumulate into existing ``.grad`` arrays; a given loss can be
    back-propagated only once (its graph is released afterwards).
    """
    if loss.values.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._done:
        raise AlreadyBackpropagated("this loss has already been back-propagated")
    if not loss.requires_grad:
        loss._done = True
        return
    tape = Tape.record(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if node._vjp is None:
            raise AlreadyBackpropagated(f"graph through {node.op!r} was already released")
        parent_grads = node._vjp(g)
        factor = _GRAD_CORRUPTION.get(node.op)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if factor is not None:
                pg = pg * factor
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in tape.nodes:
        if not node.is_leaf:
            node._vjp = None
            node._parents = ()
    loss._done = True


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------
def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values + b.values

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), vjp, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype)
    out = a.values * b.values

    def vjp(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return Tensor._from_op(out, (a, b), vjp, "mul")


def tensor_sum(x: Tensor) -> Tensor:
    def vjp(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return Tensor._from_op(np.asarray(x.values.sum()), (x,), vjp, "sum")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.values.size or any(s < 0 for s in shape):
        raise CountMismatch(f"cannot reshape {x.shape} ({x.values.size} elements) to {shape}")
    src = x.shape

    def vjp(g):
        return (g.reshape(src),)

    return Tensor._from_op(x.values.reshape(shape), (x,), vjp, "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    pattern = getattr(_local, "pattern", None)
    if pattern is not None:
        pattern.append(mask)
    out = np.where(mask, x.values, 0).astype(x.dtype)

    def vjp(g):
        return (g * mask,)

    return Tensor._from_op(out, (x,), vjp, "relu")


def softmax_values(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    y = softmax_values(x.values)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(y, (x,), vjp, "softmax")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind in ("softmax", "softmax-last-axis"):
        return softmax(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------
def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """``x @ weights + bias`` for ``x`` of shape (batch, F)."""
    if x.ndim != 2 or weights.ndim != 2 or bias.ndim != 1:
        raise ShapeMismatch("dense expects (batch, F) input, (F, U) weights and (U,) bias")
    if x.shape[1] != weights.shape[0] or weights.shape[1] != bias.shape[0]:
        raise ShapeMismatch(
            f"dense shapes disagree: input {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    out = x.values @ weights.values + bias.values

    def vjp(g):
        gx = g @ weights.values.T if x.requires_grad else None
        gw = x.values.T @ g if weights.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return Tensor._from_op(out, (x, weights, bias), vjp, "dense")


def _corr3d(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid cross-correlation: (B,H,W,D,C) with (O,K1,K2,K3,C) -> (B,H',W',D',O)."""
    win = sliding_window_view(x, k.shape[1:4], axis=(1, 2, 3))  # B,H',W',D',C,K1,K2,K3
    return np.tensordot(win, k, axes=([4, 5, 6, 7], [4, 1, 2, 3]))


def _corr3d_kernel_grad(x: np.ndarray, g: np.ndarray, ksize) -> np.ndarray:
    win = sliding_window_view(x, ksize, axis=(1, 2, 3))
    gk = np.tensordot(g, win, axes=([0, 1, 2, 3], [0, 1, 2, 3]))  # O,C,K1,K2,K3
    return gk.transpose(0, 2, 3, 4, 1)


def _corr3d_input_grad(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    k1, k2, k3 = k.shape[1:4]
    padded = np.pad(g, ((0, 0), (k1 - 1, k1 - 1), (k2 - 1, k2 - 1), (k3 - 1, k3 - 1), (0, 0)))
    flipped = k[:, ::-1, ::-1, ::-1, :]
    win = sliding_window_view(padded, (k1, k2, k3), axis=(1, 2, 3))  # B,H,W,D,O,K1,K2,K3
    return np.tensordot(win, flipped, axes=([4, 5, 6, 7], [0, 1, 2, 3]))


def _check_conv(x_shape, k_shape, b_shape, spatial: int):
    name = f"conv{spatial}d"
    if len(x_shape) != spatial + 2 or len(k_shape) != spatial + 2 or len(b_shape) != 1:
        raise ShapeMismatch(
            f"{name}: expected input rank {spatial + 2}, kernel rank {spatial + 2}, bias rank 1; "
            f"got {x_shape}, {k_shape}, {b_shape}"
        )
    if x_shape[-1] != k_shape[-1]:
        raise ShapeMismatch(f"{name}: input has {x_shape[-1]} channels, kernel expects {k_shape[-1]}")
    if b_shape[0] != k_shape[0]:
        raise ShapeMismatch(f"{name}: {k_shape[0]} filters but {b_shape[0]} biases")
    for extent, ksize in zip(x_shape[1:-1], k_shape[1:-1]):
        if ksize > extent:
            raise KernelTooLarge(f"{name}: kernel {k_shape[1:-1]} larger than input {x_shape[1:-1]}")


def conv3d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid, stride-1 3-D cross-correlation (no kernel flip).

    ``x`` is (batch, H, W, D, C_in), ``kernels`` is (C_out, K1, K2, K3, C_in).
    """
    _check_conv(x.shape, kernels.shape, bias.shape, 3)
    xv, kv = x.values, kernels.values
    out = _corr3d(xv, kv) + bias.values

    def vjp(g):
        gx = _corr3d_input_grad(g, kv) if x.requires_grad else None
        gk = _corr3d_kernel_grad(xv, g, kv.shape[1:4]) if kernels.requires_grad else None
        gb = g.sum(axis=(0, 1, 2, 3)) if bias.requires_grad else None
        return gx, gk, gb

    return Tensor._from_op(out, (x, kernels, bias), vjp, "conv3d")


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid, stride-1 2-D cross-correlation; (batch, H, W, C_in) input."""
    _check_conv(x.shape, kernels.shape, bias.shape, 2)
    xv = x.values[:, :, :, None, :]
    kv = kernels.values[:, :, :, None, :]
    out = _corr3d(xv, kv)[:, :, :, 0, :] + bias.values

    def vjp(g):
        g3 = g[:, :, :, None, :]
        gx = _corr3d_input_grad(g3, kv)[:, :, :, 0, :] if x.requires_grad else None
        gk = (
            _corr3d_kernel_grad(xv, g3, kv.shape[1:4])[:, :, :, 0, :]
            if kernels.requires_grad
            else None
        )
        gb = g.sum(axis=(0, 1, 2)) if bias.requires_grad else None
        return gx, gk, gb

    return Tensor._from_op(out, (x, kernels, bias), vjp, "conv2d")


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------
@dataclass
class GradcheckReport:
    max_rel_error: list[float]
    checked: list[int]
    tolerance: float
    reduced_steps: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.max_rel_error)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error, default=0.0)

    def __bool__(self) -> bool:
        return self.passed


def _same_pattern(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence,
    seed: int = 0,
    tol: float = 1e-4,
    max_entries: int | None = None,
    max_refinements: int = 4,
) -> GradcheckReport:
    """Compare analytic gradients of ``fn`` with central differences.

    ``inputs`` holds arrays or plain shapes; shapes are filled with standard
    normal draws from ``seed``. Non-scalar outputs are contracted with a fixed
    random cotangent. Each checked entry uses a step ``1e-4 * max(1, |x|)``
    and relative error ``|a - n| / max(|a|, |n|, 1e-8)``. ``max_entries``
    limits the check to a seeded random subset of entries per input.

    A central difference only estimates the gradient where the function is
    smooth over the whole stencil. When either probe flips a ReLU relative to
    the unperturbed point, the step is divided by 10 (up to
    ``max_refinements`` times) until no ReLU flips; such entries are counted
    in ``reduced_steps``.
    """
    rng = np.random.default_rng(seed)
    arrays = [
        rng.standard_normal(tuple(x)) if _is_shape(x) else np.array(x, dtype=np.float64)
        for x in inputs
    ]
    cotangent: list[np.ndarray | None] = [None]

    def scalar(vals, track: bool):
        ts = [Tensor(v, requires_grad=track) for v in vals]
        out = fn(*ts)
        if out.values.size != 1:
            if cotangent[0] is None:
                cotangent[0] = rng.standard_normal(out.shape)
            out = (out * cotangent[0]).sum()
        return out, ts

    def probe(vals):
        with recording_activation_pattern() as masks:
            value = scalar(vals, False)[0].item()
        return value, masks

    with recording_activation_pattern() as base_pattern:
        loss, tensors = scalar(arrays, True)
    backward(loss)
    errors, counts, reduced = [], [], []
    for idx, (arr, t) in enumerate(zip(arrays, tensors)):
        analytic = t.grad if t.grad is not None else np.zeros_like(arr)
        flat_ids = np.arange(arr.size)
        if max_entries is not None and arr.size > max_entries:
            flat_ids = rng.choice(arr.size, size=max_entries, replace=False)
        worst, n_reduced = 0.0, 0
        for fid in flat_ids:
            pos = np.unravel_index(fid, arr.shape)
            x0 = arr[pos]
            h = 1e-4 * max(1.0, abs(x0))
            for attempt in range(max_refinements + 1):
                plus = [a.copy() if j == idx else a for j, a in enumerate(arrays)]
                minus = [a.copy() if j == idx else a for j, a in enumerate(arrays)]
                plus[idx][pos] = x0 + h
                minus[idx][pos] = x0 - h
                fp, mp = probe(plus)
                fm, mm = probe(minus)
                if _same_pattern(mp, base_pattern) and _same_pattern(mm, base_pattern):
                    break
                if attempt < max_refinements:
                    h /= 10.0
            n_reduced += attempt > 0
            numeric = (fp - fm) / (2 * h)
            a = float(analytic[pos])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        errors.append(worst)
        counts.append(len(flat_ids))
        reduced.append(n_reduced)
    return GradcheckReport(errors, counts, tol, reduced)


def _is_shape(x) -> bool:
    return isinstance(x, (tuple, list)) and all(isinstance(v, (int, np.integer)) for v in x)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
_DTYPES = {"f32": "<f4", "f64": "<f8"}


def save_tensors(tensors: dict[str, np.ndarray], header_path, extra: dict | None = None) -> Path:
    """Write named arrays as a JSON header plus one little-endian payload.

    The payload is the arrays' raw bytes concatenated in header order.
    """
    header_path = Path(header_path)
    payload = header_path.with_suffix(".bin")
    entries = []
    with open(payload, "wb") as fh:
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            tag = "f64" if arr.dtype == np.float64 else "f32"
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "precision": tag})
    header = {"payload": payload.name, "byte_order": "little", "tensors": entries}
    if extra:
        header.update(extra)
    header_path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return header_path


def load_tensors(header_path) -> tuple[dict[str, np.ndarray], dict]:
    header_path = Path(header_path)
    if not header_path.is_file():
        raise MissingFile(f"checkpoint header not found: {header_path}")
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
        entries = header["tensors"]
        payload = header_path.parent / header["payload"]
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedHeader(f"{header_path}: {exc}") from None
    if not payload.is_file():
        raise MissingFile(f"checkpoint payload not found: {payload}")
    blob = payload.read_bytes()
    out, offset = {}, 0
    for e in entries:
        dt = np.dtype(_DTYPES[e["precision"]])
        n = int(np.prod(e["shape"], dtype=np.int64))
        end = offset + n * dt.itemsize
        if end > len(blob):
            raise SizeMismatch(f"{payload}: truncated at tensor {e['name']!r}")
        out[e["name"]] = np.frombuffer(blob, dtype=dt, count=n, offset=offset).reshape(e["shape"]).copy()
        offset = end
    if offset != len(blob):
        raise SizeMismatch(f"{payload}: {len(blob) - offset} trailing bytes")
    return out, header
