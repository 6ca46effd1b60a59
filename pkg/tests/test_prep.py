import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hsic.data import GroundTruth, HsiCube, stratified_split
from hsic.errors import CoordinateOutOfRange, DimensionMismatch, EmptySubset, EvenPatch, KTooLarge
from hsic.prep import (
    PatchSource,
    apply_pca,
    batch_sizes,
    extract_patch,
    fit_pca,
    load_pca,
    make_batches,
    save_pca,
    standardize_bands,
)


def jacobi_eigh(a, sweeps=100):
    """Cyclic Jacobi rotations; eigenvalues descending, eigenvectors as rows."""
    a = np.array(a, dtype=np.float64)
    n = len(a)
    v = np.eye(n)
    for _ in range(sweeps):
        off = np.sqrt(((a - np.diag(np.diag(a))) ** 2).sum())
        if off < 1e-15:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta != 0 else 1.0
                c = 1 / np.sqrt(t ** 2 + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q], rot[q, p] = s, -s
                a = rot.T @ a @ rot
                v = v @ rot
    vals = np.diag(a)
    order = np.argsort(vals)[::-1]
    return vals[order], v[:, order].T


def sign_fix(rows):
    out = []
    for r in rows:
        lead = np.argmax(np.abs(r))
        out.append(r if r[lead] > 0 else -r)
    return np.array(out)


def random_cube(seed, m=6, n=5, b=6):
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal((b, b))
    return HsiCube((rng.standard_normal((m, n, b)) @ mix).astype(np.float64))


# -- standardize ---------------------------------------------------------------
def test_standardize_constant_band_is_zero():
    cube = HsiCube(np.ones((2, 2, 1), dtype=np.float32))
    assert np.all(standardize_bands(cube).values == 0)


def test_standardize_two_values():
    cube = HsiCube(np.array([[[0.0], [2.0]]], dtype=np.float32))
    np.testing.assert_array_equal(standardize_bands(cube).values.ravel(), [-1, 1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_standardize_moments(seed):
    rng = np.random.default_rng(seed)
    cube = HsiCube((rng.standard_normal((7, 9, 4)) * rng.uniform(0.1, 50, 4) + 3).astype(np.float32))
    out = standardize_bands(cube).values.astype(np.float64)
    assert np.all(np.abs(out.mean(axis=(0, 1))) < 1e-6)
    assert np.all(np.abs(out.var(axis=(0, 1)) - 1) < 1e-5)


# -- PCA -----------------------------------------------------------------------
def test_pca_single_direction():
    rng = np.random.default_rng(0)
    v = np.zeros((5, 5, 4))
    v[..., 0] = rng.standard_normal((5, 5))
    v[..., 1:] = 3.0
    model = fit_pca(HsiCube(v), 1)
    np.testing.assert_allclose(model.components[0], [1, 0, 0, 0], atol=1e-12)
    assert model.explained_variance[0] == pytest.approx(v[..., 0].var())


@pytest.mark.parametrize("seed", range(5))
def test_pca_matches_jacobi_oracle(seed):
    cube = standardize_bands(random_cube(seed))
    model = fit_pca(cube, 3)
    x = cube.values.reshape(-1, 6)
    xc = x - x.mean(axis=0)
    vals, vecs = jacobi_eigh(xc.T @ xc / len(xc))
    np.testing.assert_allclose(model.components, sign_fix(vecs[:3]), atol=1e-6)
    np.testing.assert_allclose(model.explained_variance, vals[:3], atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_pca_components_orthonormal_and_sign_rule(seed):
    model = fit_pca(random_cube(seed, b=8), 5)
    np.testing.assert_allclose(model.components @ model.components.T, np.eye(5), atol=1e-6)
    lead = model.components[np.arange(5), np.argmax(np.abs(model.components), axis=1)]
    assert np.all(lead > 0)
    ev = model.explained_variance
    assert np.all(ev >= 0) and np.all(np.diff(ev) <= 0)


def test_pca_full_rank_preserves_distances():
    cube = random_cube(1)
    model = fit_pca(cube, 6)
    x = cube.values.reshape(-1, 6)
    y = apply_pca(cube, model).values.reshape(-1, 6)
    dx = np.linalg.norm(x[:, None] - x[None], axis=-1)
    dy = np.linalg.norm(y[:, None] - y[None], axis=-1)
    np.testing.assert_allclose(dy, dx, atol=1e-4)


@pytest.mark.parametrize("seed,k", [(0, 1), (1, 2), (2, 4), (3, 5)])
def test_pca_reconstruction_error_equals_discarded_variance(seed, k):
    cube = random_cube(seed)
    model = fit_pca(cube, k)
    x = cube.values.reshape(-1, 6)
    recon = model.inverse_transform(model.transform(x))
    err = ((x - recon) ** 2).sum()
    xc = x - x.mean(axis=0)
    vals, _ = jacobi_eigh(xc.T @ xc / len(xc))
    assert err == pytest.approx(vals[k:].sum() * len(x), abs=1e-4)


def test_projected_variances_match_explained_variance():
    cube = standardize_bands(random_cube(4, m=10, n=10, b=6))
    model = fit_pca(cube, 4)
    y = apply_pca(cube, model).values.reshape(-1, 4)
    np.testing.assert_allclose(y.var(axis=0), model.explained_variance, atol=1e-5)


def test_pca_errors():
    cube = random_cube(0)
    with pytest.raises(KTooLarge):
        fit_pca(cube, 7)
    with pytest.raises(KTooLarge):
        fit_pca(cube, 0)
    with pytest.raises(DimensionMismatch):
        apply_pca(HsiCube(np.zeros((2, 2, 5))), fit_pca(cube, 2))


def test_apply_pca_examples():
    cube = random_cube(2)
    model = fit_pca(cube, 3)
    model_zero_mean = type(model)(np.zeros(6), model.components, model.explained_variance)
    np.testing.assert_allclose(model_zero_mean.transform(model.components[0]), [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(model_zero_mean.transform(np.zeros(6)), 0)


def test_apply_pca_indian_pines_shape():
    cube = HsiCube(np.random.default_rng(0).standard_normal((145, 145, 200)).astype(np.float32))
    out = apply_pca(cube, fit_pca(cube, 15))
    assert out.shape == (145, 145, 15)


def test_pca_train_only_fit_uses_given_pixels():
    cube = random_cube(3)
    coords = np.array([[0, 0], [1, 2], [3, 4], [5, 1], [2, 2], [4, 3], [0, 4]])
    model = fit_pca(cube, 2, coords)
    sub = HsiCube(cube.values[coords[:, 0], coords[:, 1]][None])
    np.testing.assert_allclose(model.components, fit_pca(sub, 2).components)


def test_pca_dump_round_trip(tmp_path):
    model = fit_pca(random_cube(0), 3)
    save_pca(model, tmp_path / "pca.json")
    raw = np.fromfile(tmp_path / "pca.f64", dtype="<f8")
    np.testing.assert_array_equal(raw[:6], model.mean)
    back = load_pca(tmp_path / "pca.json")
    np.testing.assert_array_equal(back.components, model.components)
    np.testing.assert_array_equal(back.explained_variance, model.explained_variance)


# -- patches -------------------------------------------------------------------
def grid_cube(m=4, n=4):
    r, c = np.mgrid[0:m, 0:n]
    return HsiCube((10 * r + c)[..., None].astype(np.float32))


def test_patch_size_one_is_pixel():
    cube = random_cube(0)
    np.testing.assert_array_equal(extract_patch(cube, 2, 3, 1)[0, 0], cube.values[2, 3])


def test_corner_patch_mirror():
    patch = extract_patch(grid_cube(), 0, 0, 3)[..., 0]
    assert patch[0, 0] == 11
    np.testing.assert_array_equal(patch, [[11, 10, 11], [1, 0, 1], [11, 10, 11]])


def test_mirror_excludes_edge_pixel():
    # index -1 maps to 1 and -2 to 2 along a row
    patch = extract_patch(grid_cube(1, 6), 0, 0, 5)[2, :, 0]
    np.testing.assert_array_equal(patch, [2, 1, 0, 1, 2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 7), st.integers(0, 6), st.sampled_from([1, 3, 5, 7, 9]))
def test_patch_center_is_pixel(row, col, p):
    cube = random_cube(1, m=8, n=7, b=3)
    patch = extract_patch(cube, row, col, p)
    assert patch.shape == (p, p, 3)
    np.testing.assert_array_equal(patch[p // 2, p // 2], cube.values[row, col])


def test_patch_translation_consistency():
    big = random_cube(5, m=12, n=12, b=2).values
    shifted = HsiCube(big[2:, 3:])
    a = extract_patch(HsiCube(big), 6, 7, 5)
    b = extract_patch(shifted, 4, 4, 5)
    np.testing.assert_array_equal(a, b)


def test_patch_errors():
    cube = grid_cube()
    with pytest.raises(EvenPatch):
        extract_patch(cube, 0, 0, 4)
    with pytest.raises(CoordinateOutOfRange):
        extract_patch(cube, 4, 0, 3)
    with pytest.raises(CoordinateOutOfRange):
        extract_patch(cube, 0, -1, 3)


def test_patch_source_matches_extract_patch():
    cube = random_cube(2, m=7, n=6, b=3)
    src = PatchSource(cube, 5, dtype=np.float64)
    coords = np.array([[0, 0], [6, 5], [3, 2]])
    got = src.gather(coords)
    assert got.shape == (3, 5, 5, 3, 1)
    for i, (r, c) in enumerate(coords):
        np.testing.assert_array_equal(got[i, ..., 0], extract_patch(cube, r, c, 5))


# -- batches -------------------------------------------------------------------
def labelled_scene(m=6, n=5, y=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(1, y + 1, (m, n))
    labels[0, 0], labels[0, 1] = 1, 2
    return random_cube(seed, m, n, 3), GroundTruth(labels, y)


def test_batch_sizes_ceiling():
    assert batch_sizes(10, 4) == [4, 4, 2]
    cube, gt = labelled_scene()
    coords = np.argwhere(gt.labels > 0)[:10]
    split = stratified_split(gt)
    sizes = [len(b) for b in make_batches(cube, gt, split, "train", 3, 4, shuffle=False, coords=coords)]
    assert sizes == [4, 4, 2]


def test_unshuffled_batches_row_major():
    cube, gt = labelled_scene(8, 8)
    split = stratified_split(gt, seed=1)
    coords = np.concatenate([b.coords for b in make_batches(cube, gt, split, "test", 3, 5, shuffle=False)])
    np.testing.assert_array_equal(coords, split.test)


def test_batches_cover_subset_once_and_are_seeded():
    cube, gt = labelled_scene(9, 9, y=3)
    split = stratified_split(gt, seed=2)
    run = lambda seed: list(make_batches(cube, gt, split, "train", 5, 4, seed=seed, shuffle=True))
    a, b = run(11), run(11)
    ca = np.concatenate([x.coords for x in a])
    assert sorted(map(tuple, ca)) == sorted(map(tuple, split.train))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.data, y.data)
        np.testing.assert_array_equal(x.labels, y.labels)
    assert not np.array_equal(ca, np.concatenate([x.coords for x in run(12)]))


def test_batch_contents():
    cube, gt = labelled_scene(6, 6)
    split = stratified_split(gt, seed=0)
    for batch in make_batches(cube, gt, split, "val", 3, 8, shuffle=True, seed=4):
        assert batch.data.shape[1:] == (3, 3, 3, 1)
        assert np.all(batch.labels > 0)
        for i, (r, c) in enumerate(batch.coords):
            np.testing.assert_allclose(batch.data[i, 1, 1, :, 0], cube.values[r, c], rtol=1e-6)
            assert batch.labels[i] == gt.labels[r, c]


def test_empty_subset():
    cube, gt = labelled_scene()
    split = stratified_split(gt, ratios=(0.0, 0.0, 1.0))
    with pytest.raises(EmptySubset):
        next(make_batches(cube, gt, split, "train", 3, 4))
