import json

import numpy as np
import pytest

from hsic.data import GroundTruth, HsiCube, save_cube, save_ground_truth
from hsic.synthetic import gaussian_scene


def write_raw(tmp_path, name, header, payload: bytes):
    (tmp_path / header["payload"]).write_bytes(payload)
    path = tmp_path / name
    path.write_text(json.dumps(header))
    return path


@pytest.fixture
def cube_header():
    def make(rows, cols, bands, payload="cube.f32", **extra):
        h = {"rows": rows, "cols": cols, "bands": bands, "dtype": "f32", "order": "bsq",
             "byte_order": "little", "payload": payload}
        h.update(extra)
        return h
    return make


@pytest.fixture
def gt_header():
    def make(rows, cols, num_classes, payload="gt.u16", **extra):
        h = {"rows": rows, "cols": cols, "bands": 1, "dtype": "u16", "order": "bsq",
             "byte_order": "little", "payload": payload, "num_classes": num_classes,
             "class_names": [f"c{i}" for i in range(1, num_classes + 1)]}
        h.update(extra)
        return h
    return make


@pytest.fixture(scope="session")
def tiny_scene():
    """16x16x20 three-class scene: the smallest raster the default kernel stack accepts."""
    return gaussian_scene(rows=16, cols=16, bands=20, num_classes=3, sigma=0.3, seed=7)


@pytest.fixture
def tiny_dataset(tmp_path, tiny_scene):
    cube, gt = tiny_scene
    save_cube(cube, tmp_path / "cube.json")
    save_ground_truth(gt, tmp_path / "gt.json")
    cfg = {"cube": "cube.json", "ground_truth": "gt.json", "epochs": 2, "batch_size": 32,
           "out_dir": "out", "seed": 3}
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    return tmp_path
