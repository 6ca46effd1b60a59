import math

import numpy as np
import pytest

from hsic.errors import NegativeExtent, PatchTooSmall, ShapeMismatch
from hsic.model import (
    ArchSpec,
    build_default_arch,
    forward,
    infer_shapes,
    init_params,
    param_count,
    param_shapes,
)
from hsic.selftest import model_gradcheck, narrow_arch

DEFAULT_TRACE = [
    (15, 15, 15, 1), (11, 11, 9, 8), (7, 7, 5, 16), (5, 5, 3, 32), (3, 3, 1, 64),
    (3, 3, 64), (1, 1, 128), (128,), (256,), (128,), (16,),
]


def trace_by_hand(p, k, layers3, layer2, dense):
    """Independent extent arithmetic for valid stride-1 convolutions."""
    h = w = p
    d, c = k, 1
    out = [(h, w, d, c)]
    for f, a, b, e in layers3:
        h, w, d, c = h - a + 1, w - b + 1, d - e + 1, f
        out.append((h, w, d, c))
    out.append((h, w, d * c))
    f, a, b = layer2
    h, w = h - a + 1, w - b + 1
    out.append((h, w, f))
    out.append((h * w * f,))
    out += [(u,) for u in dense]
    return out


def test_default_arch_spec():
    arch = build_default_arch(16)
    assert arch.conv3d_layers == ((8, 5, 5, 7), (16, 5, 5, 5), (32, 3, 3, 3), (64, 3, 3, 3))
    assert arch.conv2d_layer == (128, 3, 3)
    assert arch.dense_units == (256, 128, 16)
    assert arch.input_patch == (15, 15, 15, 1)


def test_pavia_head():
    arch = build_default_arch(9)
    assert arch.conv3d_layers == build_default_arch(16).conv3d_layers
    assert arch.dense_units[-1] == 9


def test_patch_too_small():
    with pytest.raises(PatchTooSmall):
        build_default_arch(16, patch_size=5)
    with pytest.raises(PatchTooSmall):
        build_default_arch(16, num_components=10)


def test_default_shape_trace():
    arch = build_default_arch(16)
    assert infer_shapes(arch) == DEFAULT_TRACE
    assert DEFAULT_TRACE == trace_by_hand(15, 15, arch.conv3d_layers, arch.conv2d_layer, arch.dense_units)


def test_single_unit_conv_keeps_extent():
    arch = ArchSpec(((4, 1, 1, 1),), (2, 1, 1), (3,), 3, (5, 6, 7, 1))
    assert infer_shapes(arch)[1] == (5, 6, 7, 4)


def test_negative_extent():
    with pytest.raises(NegativeExtent):
        infer_shapes(ArchSpec(((2, 1, 1, 9),), (2, 1, 1), (3,), 3, (5, 5, 7, 1)))


def test_parameter_count_regression():
    arch = build_default_arch(16)
    by_hand = (
        8 * 5 * 5 * 7 * 1 + 8 + 16 * 5 * 5 * 5 * 8 + 16 + 32 * 27 * 16 + 32 + 64 * 27 * 32 + 64
        + 128 * 9 * 64 + 128 + 128 * 256 + 256 + 256 * 128 + 128 + 128 * 16 + 16
    )
    assert by_hand == 228480
    assert param_count(arch) == 228480
    assert init_params(arch, 0).count == 228480


def test_init_params_rules():
    arch = build_default_arch(16)
    p = init_params(arch, 3)
    assert p.arrays["conv3d_1.kernel"].shape == (8, 5, 5, 7, 1)
    assert p.arrays["conv3d_1.kernel"].size == 1400
    for name, arr in p.arrays.items():
        assert arr.shape == param_shapes(arch)[name]
        if name.endswith(".bias"):
            assert np.all(arr == 0)
    assert np.abs(p.arrays["conv3d_1.kernel"]).max() <= math.sqrt(6 / 175)
    assert np.abs(p.arrays["dense_7.weights"]).max() <= math.sqrt(6 / 128)
    assert np.abs(p.arrays["dense_8.weights"]).max() <= math.sqrt(6 / (128 + 16))
    q = init_params(arch, 3)
    assert all(p.arrays[k].tobytes() == q.arrays[k].tobytes() for k in p.arrays)
    r = init_params(arch, 4)
    assert not np.array_equal(p.arrays["conv3d_1.kernel"], r.arrays["conv3d_1.kernel"])


def test_arch_round_trip():
    arch = build_default_arch(9, dropout=0.25)
    assert ArchSpec.from_dict(arch.to_dict()) == arch


@pytest.fixture(scope="module")
def default_model():
    arch = build_default_arch(16)
    params = init_params(arch, 1, dtype=np.float64)
    x = np.random.default_rng(2).standard_normal((5, 15, 15, 15, 1))
    return params, x


def test_forward_shape_and_normalization(default_model):
    params, x = default_model
    out = forward(params, x[:2])
    assert out.shape == (2, 16)
    np.testing.assert_allclose(out.sum(axis=1), 1, atol=1e-6)


def test_forward_zero_params_uniform():
    arch = build_default_arch(16)
    p = init_params(arch, 0)
    for arr in p.arrays.values():
        arr[...] = 0
    out = forward(p, np.ones((2, 15, 15, 15, 1), dtype=np.float32))
    np.testing.assert_allclose(out, 1 / 16, atol=1e-7)


def test_forward_per_sample_independent(default_model):
    params, x = default_model
    full = forward(params, x)
    parts = np.concatenate([forward(params, x[i:i + 1]) for i in range(len(x))])
    np.testing.assert_allclose(full, parts, atol=1e-12)
    perm = np.array([3, 0, 4, 2, 1])
    np.testing.assert_allclose(forward(params, x[perm]), full[perm], atol=1e-12)


def test_forward_rejects_wrong_patch(default_model):
    params, _ = default_model
    with pytest.raises(ShapeMismatch):
        forward(params, np.zeros((1, 13, 15, 15, 1)))


def test_forward_float32_deterministic():
    arch = build_default_arch(16)
    p = init_params(arch, 5)
    x = np.random.default_rng(0).standard_normal((3, 15, 15, 15, 1)).astype(np.float32)
    a, b = forward(p, x), forward(p, x)
    assert a.dtype == np.float32 and a.tobytes() == b.tobytes()


def test_narrow_model_gradcheck_every_entry():
    rep = model_gradcheck(narrow_arch(), seed=0)
    assert rep.passed, rep
    assert sum(rep.checked) == param_count(narrow_arch())


@pytest.mark.parametrize("seed", [0, 1])
def test_default_model_gradcheck_sampled(seed):
    rep = model_gradcheck(build_default_arch(16), seed=seed, max_entries=4)
    assert rep.passed, rep
    assert len(rep.checked) == len(param_shapes(build_default_arch(16)))
