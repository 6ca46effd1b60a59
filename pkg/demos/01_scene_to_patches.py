"""
From a raw cube to network-ready patches
========================================

Walks a synthetic scene through the preprocessing chain: the band-sequential
container, per-band standardization, PCA down to 15 components, the stratified
25/25/50 split and mirror-padded 15x15 patches.
"""

import tempfile
from pathlib import Path

import numpy as np

import hsic
from hsic.prep import PatchSource

# a 32x32 scene with 30 bands and 4 classes
cube, gt = hsic.gaussian_scene(rows=32, cols=32, bands=30, num_classes=4, seed=0)
print("cube", cube.shape, cube.values.dtype)
print("pixels per class", hsic.class_histogram(gt))

# round trip through the on-disk format (JSON header + little-endian payload)
tmp = Path(tempfile.mkdtemp())
hsic.save_cube(cube, tmp / "cube.json")
hsic.save_ground_truth(gt, tmp / "gt.json")
again = hsic.load_cube(tmp / "cube.json")
print("reloaded equal:", np.array_equal(again.values, cube.values))

# standardize every band, then keep 15 principal components
std = hsic.standardize_bands(cube)
print("band means ~0:", np.abs(std.values.mean(axis=(0, 1))).max() < 1e-5)
pca = hsic.fit_pca(std, 15)
reduced = hsic.apply_pca(std, pca)
share = pca.explained_variance.sum() / std.values.reshape(-1, 30).var(axis=0).sum()
print("reduced", reduced.shape, f"keeps {share:.1%} of the variance")

# per-class 25/25/50 split; the count rule is deterministic, the order is seeded
split = hsic.stratified_split(gt, (0.25, 0.25, 0.5), seed=0)
for c, counts in split.counts_by_class(gt).items():
    print(f"  class {c}: train/val/test = {counts}")

# corner patches are filled by mirror reflection
corner = hsic.extract_patch(reduced, 0, 0, 15)
print("corner patch", corner.shape, "center equals pixel:",
      np.array_equal(corner[7, 7], reduced.values[0, 0]))

# batches carry a trailing channel axis for the 3-D convolutions
source = PatchSource(reduced, 15)
batch = next(hsic.make_batches(source, gt, split, "train", 15, 64, seed=0))
print("batch", batch.data.shape, "labels", np.bincount(batch.labels))
