"""Built-in correctness checks run by ``hsic selftest``."""

from __future__ import annotations

import time
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .data import GroundTruth, stratified_split
from .loss import SmoothingParams, cross_entropy, decomposed_loss, loss_grad_logits, smooth_targets
from .metrics import average_accuracy, binary_chance_terms, chance_agreement, kappa, overall_accuracy
from .model import ArchSpec, build_default_arch, forward_tensors, init_params
from .reference import INDIAN_PINES_SPLIT


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _gradcheck_ops(seed: int) -> list[tuple[str, ad.GradcheckReport]]:
    cases = [
        ("dense", lambda x, w, b: ad.dense(x, w, b), [(4, 3), (3, 5), (5,)]),
        ("conv3d", lambda x, k, b: ad.conv3d(x, k, b), [(2, 4, 4, 4, 2), (3, 2, 2, 2, 2), (3,)]),
        ("conv2d", lambda x, k, b: ad.conv2d(x, k, b), [(2, 5, 4, 3), (2, 3, 2, 3), (2,)]),
        ("relu", ad.relu, [(3, 7)]),
        ("softmax", ad.softmax, [(3, 6)]),
        ("reshape", lambda x: ad.reshape(x, (3, 1, 8)), [(2, 12)]),
    ]
    out = [(name, ad.gradcheck(fn, shapes, seed=seed)) for name, fn, shapes in cases]
    targets = smooth_targets([1, 3, 2], SmoothingParams(0.1, 4))
    out.append((
        "smoothed cross-entropy",
        ad.gradcheck(lambda z: cross_entropy(ad.softmax(z), targets), [(3, 4)], seed=seed),
    ))
    return out


def model_gradcheck(arch: ArchSpec, seed: int, max_entries: int | None = None,
                    epsilon: float = 0.1, batch: int = 2) -> ad.GradcheckReport:
    """Finite-difference check of the smoothed loss with respect to every parameter tensor."""
    rng = np.random.default_rng(seed)
    params = init_params(arch, seed, dtype=np.float64)
    # nonzero biases so their gradients are exercised away from the init point
    for name, arr in params.arrays.items():
        if name.endswith(".bias"):
            arr[...] = 0.05 * rng.standard_normal(arr.shape)
    names = list(params.arrays)
    x = rng.standard_normal((batch,) + arch.input_patch)
    labels = rng.integers(1, arch.num_classes + 1, batch)
    targets = smooth_targets(labels, SmoothingParams(epsilon, arch.num_classes))

    def loss(*tensors):
        probs = forward_tensors(arch, dict(zip(names, tensors)), ad.Tensor(x))
        return cross_entropy(probs, targets)

    return ad.gradcheck(loss, [params.arrays[n] for n in names], seed=seed, max_entries=max_entries)


def narrow_arch(num_classes: int = 3) -> ArchSpec:
    """Default kernel geometry with two filters per layer, small enough to check exhaustively."""
    return ArchSpec(
        conv3d_layers=((2, 5, 5, 7), (2, 5, 5, 5), (2, 3, 3, 3), (2, 3, 3, 3)),
        conv2d_layer=(2, 3, 3),
        dense_units=(4, 4, num_classes),
        num_classes=num_classes,
        input_patch=(15, 15, 15, 1),
    )


def metrics_from_definition(counts: np.ndarray) -> tuple[float, float, float]:
    """OA, AA and kappa by explicit loops over the confusion matrix."""
    y = counts.shape[0]
    total = correct = 0.0
    for i in range(y):
        for j in range(y):
            total += counts[i, j]
            if i == j:
                correct += counts[i, j]
    oa = correct / total
    accs = []
    for i in range(y):
        row = sum(counts[i, j] for j in range(y))
        if row > 0:
            accs.append(counts[i, i] / row)
    aa = sum(accs) / len(accs)
    pe = 0.0
    for c in range(y):
        row = sum(counts[c, j] for j in range(y))
        col = sum(counts[i, c] for i in range(y))
        pe += (row / total) * (col / total)
    return oa, aa, (oa - pe) / (1 - pe)


def _check(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def run_checks(corrupt: str | None = None, seeds: int = 3) -> list[CheckResult]:
    """Run every check; ``corrupt`` scales that op's gradients by 1.01 (hook for testing)."""
    ctx = ad.corrupted_gradient(corrupt, 1.01) if corrupt else nullcontext()
    results = []
    with ctx:
        per_op: dict[str, list[float]] = {}
        for seed in range(seeds):
            for name, rep in _gradcheck_ops(seed):
                per_op.setdefault(name, []).append(rep.worst)
        for name, worst in per_op.items():
            results.append(CheckResult(
                f"gradcheck {name}", max(worst) <= 1e-4,
                f"max rel err {max(worst):.2e} over {seeds} seeds", 0.0,
            ))

        def narrow():
            rep = model_gradcheck(narrow_arch(), seed=0)
            return rep.passed, f"max rel err {rep.worst:.2e}, {sum(rep.checked)} entries"

        def default():
            rep = model_gradcheck(build_default_arch(16), seed=0, max_entries=6)
            return rep.passed, f"max rel err {rep.worst:.2e}, {sum(rep.checked)} sampled entries"

        results.append(_check("gradcheck hybrid model (narrow, every entry)", narrow))
        results.append(_check("gradcheck hybrid model (default, sampled)", default))

    def identity():
        rng = np.random.default_rng(0)
        worst = 0.0
        for eps in (0.0, 0.05, 0.1, 0.2, 0.5, 1.0):
            for _ in range(20):
                y = int(rng.integers(2, 17))
                q = ad.softmax_values(rng.standard_normal((8, y)) * 3)
                labels = rng.integers(1, y + 1, 8)
                sp = SmoothingParams(eps, y)
                direct = cross_entropy(q, smooth_targets(labels, sp)).item()
                worst = max(worst, abs(direct - decomposed_loss(q, labels, sp)))
        return worst <= 1e-12, f"max |direct - decomposed| {worst:.1e}"

    def logit_grad():
        rng = np.random.default_rng(1)
        z = ad.Tensor(rng.standard_normal((5, 6)), requires_grad=True)
        p = smooth_targets(rng.integers(1, 7, 5), SmoothingParams(0.2, 6))
        q = ad.softmax(z)
        loss = cross_entropy(q, p)
        ad.backward(loss)
        err = np.abs(z.grad - loss_grad_logits(q.values, p)).max()
        return err <= 1e-10, f"max |tape - (q - p)| {err:.1e}"

    def hand_metrics():
        c = np.array([[40, 10], [5, 45]])
        ok = (abs(kappa(c) - 0.7) < 1e-12 and abs(overall_accuracy(c) - 0.85) < 1e-12
              and abs(average_accuracy(c) - 0.85) < 1e-12)
        pp, pm = binary_chance_terms(40, 10, 5, 45)
        ok &= abs(pp + pm - chance_agreement(c)) <= 1e-15
        return ok, f"kappa {kappa(c):.12f}, OA {overall_accuracy(c):.12f}"

    def oracle_metrics():
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(200):
            y = int(rng.integers(2, 17))
            c = rng.integers(0, 51, (y, y))
            if chance_agreement(c) == 1.0:
                continue
            got = (overall_accuracy(c), average_accuracy(c), kappa(c))
            worst = max(worst, *(abs(a - b) for a, b in zip(got, metrics_from_definition(c))))
        return worst <= 1e-12, f"max deviation {worst:.1e} over 200 matrices"

    def split_rule():
        labels = np.zeros((145, 145), dtype=np.uint16)
        flat = labels.ravel()
        pos = 0
        for c, (_, tr, va, te) in enumerate(INDIAN_PINES_SPLIT, 1):
            n = tr + va + te
            flat[pos:pos + n] = c
            pos += n
        gt = GroundTruth(labels, len(INDIAN_PINES_SPLIT), tuple(r[0] for r in INDIAN_PINES_SPLIT))
        counts = stratified_split(gt, (0.25, 0.25, 0.5), seed=0).counts_by_class(gt)
        bad = [row[0] for c, row in enumerate(INDIAN_PINES_SPLIT, 1) if counts[c] != tuple(row[1:])]
        return not bad, "all 16 classes match" if not bad else f"mismatch: {', '.join(bad)}"

    for name, fn in [
        ("loss identity (direct vs decomposed)", identity),
        ("softmax-loss logit gradient", logit_grad),
        ("metrics hand cases", hand_metrics),
        ("metrics vs from-definition oracle", oracle_metrics),
        ("split rule vs Indian Pines table", split_rule),
    ]:
        results.append(_check(name, fn))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  result  detail"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL':6}  {r.detail}")
    return "\n".join(lines)
