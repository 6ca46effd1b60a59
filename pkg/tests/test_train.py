import numpy as np
import pytest

from hsic import pipeline
from hsic.config import ExperimentConfig
from hsic.errors import DivergedLoss, ShapeMismatch
from hsic.loss import one_hot
from hsic.model import ArchSpec, init_params
from hsic.synthetic import gaussian_scene
from hsic.train import (
    AdamState,
    EpochLog,
    SubsetStream,
    TrainConfig,
    adam_step,
    evaluate,
    read_curves,
    train,
    write_curves,
)

SMALL = ArchSpec(((4, 3, 3, 3),), (8, 3, 3), (16, 3), 3, (7, 7, 5, 1))


def adam_oracle(p, g_seq, m=0.0, v=0.0, t=0, lr=1e-3, b1=0.9, b2=0.999, d=1e-8):
    for g in g_seq:
        t += 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p = p - lr * mh / (vh ** 0.5 + d)
    return p, m, v, t


# -- Adam ----------------------------------------------------------------------
def test_adam_zero_gradient_fixed_point():
    p = {"w": np.array([1.0, -2.0])}
    st = AdamState.zeros_like(p)
    adam_step(p, {"w": np.zeros(2)}, st)
    assert p["w"].tolist() == [1.0, -2.0] and st.t == 1


def test_adam_first_step_example():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([1.0])}, AdamState.zeros_like(p, lr=0.001))
    assert p["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-18)
    assert p["w"][0] == pytest.approx(-0.000999999990, abs=1e-15)


def test_adam_two_steps_match_oracle():
    p = {"w": np.array([0.0])}
    st = AdamState.zeros_like(p)
    for _ in range(2):
        adam_step(p, {"w": np.array([1.0])}, st)
    assert abs(p["w"][0] - adam_oracle(0.0, [1.0, 1.0])[0]) <= 1e-12


def test_adam_random_cases_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p0, m0, v0 = rng.standard_normal(), rng.standard_normal(), rng.uniform(0, 2)
        t0 = int(rng.integers(0, 50))
        lr = float(rng.uniform(1e-4, 1e-1))
        g = rng.standard_normal() * 10
        p = {"w": np.array([p0])}
        st = AdamState({"w": np.array([m0])}, {"w": np.array([v0])}, t=t0, lr=lr)
        adam_step(p, {"w": np.array([g])}, st)
        ep, em, ev, et = adam_oracle(p0, [g], m0, v0, t0, lr)
        assert abs(p["w"][0] - ep) <= 1e-12
        assert abs(st.m["w"][0] - em) <= 1e-12 and abs(st.v["w"][0] - ev) <= 1e-12 and st.t == et


def test_adam_shape_mismatch():
    p = {"w": np.zeros(2)}
    with pytest.raises(ShapeMismatch):
        adam_step(p, {"w": np.zeros(3)}, AdamState.zeros_like(p))


# -- small-model training ------------------------------------------------------
@pytest.fixture(scope="module")
def small_setup():
    cube, gt = gaussian_scene(12, 12, 10, 3, sigma=0.3, seed=2)
    cfg = ExperimentConfig(num_components=5, patch_size=7, batch_size=16, seed=1, epochs=3)
    prep = pipeline.prepare(cfg, cube, gt)
    return cfg, prep


def run_small(cfg, prep, **kw):
    tr, va, _ = pipeline.streams(cfg, prep)
    conf = pipeline.train_config(cfg)
    for k, v in kw.pop("config", {}).items():
        setattr(conf, k, v)
    return train(SMALL, tr, va, conf, **kw)


def test_zero_learning_rate_keeps_init(small_setup):
    cfg, prep = small_setup
    tr, va, _ = pipeline.streams(cfg, prep)
    init = init_params(SMALL, cfg.seed)
    res = train(SMALL, tr, va, TrainConfig(epochs=1, batch_size=len(tr), learning_rate=0.0, seed=cfg.seed))
    for k in init.arrays:
        assert res.params.arrays[k].tobytes() == init.arrays[k].tobytes()


def test_training_is_bit_deterministic(small_setup):
    cfg, prep = small_setup
    a, b = run_small(cfg, prep), run_small(cfg, prep)
    assert [l.train_loss for l in a.logs] == [l.train_loss for l in b.logs]
    assert [l.val_loss for l in a.logs] == [l.val_loss for l in b.logs]
    for k in a.params.arrays:
        assert a.params.arrays[k].tobytes() == b.params.arrays[k].tobytes()


def test_eps_zero_equals_one_hot_targets(small_setup):
    cfg, prep = small_setup
    hard = lambda labels, y, eps, dtype: one_hot(labels, y, dtype=dtype)
    a = run_small(cfg, prep, config={"epsilon": 0.0})
    b = run_small(cfg, prep, config={"epsilon": 0.0}, targets=hard)
    for k in a.params.arrays:
        assert a.params.arrays[k].tobytes() == b.params.arrays[k].tobytes()
    c = run_small(cfg, prep, config={"epsilon": 0.1})
    assert not all(np.array_equal(a.params.arrays[k], c.params.arrays[k]) for k in a.params.arrays)


def test_logs_one_row_per_epoch(small_setup, tmp_path):
    cfg, prep = small_setup
    seen = []
    res = run_small(cfg, prep, callback=seen.append)
    assert [l.epoch for l in res.logs] == [1, 2, 3] and len(seen) == 3
    assert all(l.seconds >= 0 and 0 <= l.train_acc <= 1 for l in res.logs)
    write_curves(res.logs, tmp_path / "curves.csv")
    assert (tmp_path / "curves.csv").read_text().splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc,seconds"
    back = read_curves(tmp_path / "curves.csv")
    assert [l.train_loss for l in back] == [l.train_loss for l in res.logs]


def test_diverged_loss_raises(small_setup):
    cfg, prep = small_setup
    params = init_params(SMALL, 0)
    params.arrays["dense_4.bias"][0] = np.nan
    with pytest.raises(DivergedLoss) as info:
        run_small(cfg, prep, params=params)
    assert info.value.state["epoch"] == 1 and info.value.state["batch"] == 0


def test_subset_stream_reshuffles_per_epoch(small_setup):
    cfg, prep = small_setup
    tr, _, _ = pipeline.streams(cfg, prep)
    e1 = np.concatenate([b.coords for b in tr.batches(1)])
    e1b = np.concatenate([b.coords for b in tr.batches(1)])
    e2 = np.concatenate([b.coords for b in tr.batches(2)])
    np.testing.assert_array_equal(e1, e1b)
    assert not np.array_equal(e1, e2)
    assert sorted(map(tuple, e1)) == sorted(map(tuple, e2))


# -- evaluate ------------------------------------------------------------------
def test_uniform_predictions_tie_to_class_one(small_setup):
    cfg, prep = small_setup
    params = init_params(SMALL, 0)
    for arr in params.arrays.values():
        arr[...] = 0
    _, _, te = pipeline.streams(cfg, prep)
    res = evaluate(params, te)
    assert set(res.predictions.values()) == {1}
    assert res.accuracy == pytest.approx(np.mean(res.labels == 1))


def test_evaluate_order_invariant(small_setup):
    cfg, prep = small_setup
    params = init_params(SMALL, 4)
    plain = SubsetStream(prep.source, prep.gt, prep.split, "test", 7)
    shuffled = SubsetStream(prep.source, prep.gt, prep.split, "test", 5, shuffle=True, seed=9)
    a, b = evaluate(params, plain), evaluate(params, shuffled)
    assert a.predictions == b.predictions
    assert a.accuracy == b.accuracy
    assert a.mean_loss == pytest.approx(b.mean_loss, rel=1e-6)


# -- default architecture on a separable scene ---------------------------------
@pytest.fixture(scope="module")
def separable_run():
    cube, gt = gaussian_scene(16, 16, 20, 3, sigma=0.2, seed=1)
    cfg = ExperimentConfig(epochs=50)
    prep = pipeline.prepare(cfg, cube, gt)
    return pipeline.fit(cfg, prep)


@pytest.mark.slow
def test_separable_scene_train_accuracy(separable_run):
    assert separable_run.logs[-1].train_acc >= 0.99


@pytest.mark.slow
def test_median_loss_decreases(separable_run):
    losses = [l.train_loss for l in separable_run.logs]
    assert np.median(losses[-5:]) < np.median(losses[:5])
