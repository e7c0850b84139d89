import numpy as np
import pytest

from grufcn.data_ucr import UcrDataset
from grufcn.model import ArchConfig, build, forward, load_checkpoint
from grufcn.tensor_core import Rng, ShapeMismatchError
from grufcn.train import (
    AdamState,
    EpochRecord,
    LrSchedule,
    TrainRun,
    adam_step,
    evaluate,
    fit,
    lr_at,
    one_hot,
    write_history_csv,
)


def reference_adam(grad_fn, p0, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Independent scalar Adam oracle written straight from the update rule."""
    p, m, v = float(p0), 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(p)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


def make_synthetic(n_per_class, length, noise, seed):
    """Two linearly separable series shapes plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, length)
    shapes = [np.sin(2 * np.pi * t), -np.sin(2 * np.pi * t)]
    xs, ys = [], []
    for label, shape in enumerate(shapes):
        xs.append(shape + noise * rng.normal(size=(n_per_class, length)))
        ys.append(np.full(n_per_class, label))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    return x[order], y[order]


def make_synthetic_dataset(n_train=16, n_test=8, length=24, noise=0.05, seed=0):
    train_x, train_y = make_synthetic(n_train // 2, length, noise, seed)
    test_x, test_y = make_synthetic(n_test // 2, length, noise, seed + 1)
    return UcrDataset("synthetic", train_x, train_y, test_x, test_y,
                      {0.0: 0, 1.0: 1})


class TestAdam:
    def test_matches_scalar_oracle_over_fifty_steps(self):
        # quadratic bowl: grad(p) = 2 * (p - 3)
        grad_fn = lambda p: 2.0 * (p - 3.0)
        expected = reference_adam(grad_fn, p0=-1.0, lr=0.05, steps=50)

        state = AdamState(lr=0.05)
        params = {"p": np.array([-1.0])}
        for _ in range(50):
            adam_step(state, params, {"p": 2.0 * (params["p"] - 3.0)})
        assert abs(float(params["p"][0]) - expected) < 1e-12

    def test_first_step_size_is_lr(self):
        # bias correction makes the first update lr * g/|g| up to epsilon
        for g in (1e-6, 1.0, 1e6):
            state = AdamState(lr=0.01)
            params = {"p": np.array([0.0])}
            adam_step(state, params, {"p": np.array([g])})
            # epsilon shaves ~g/(|g|+eps) off; visible only for tiny gradients
            assert float(params["p"][0]) == pytest.approx(-0.01, rel=0.02)

    def test_zero_gradient_is_a_no_op(self):
        state = AdamState(lr=0.1)
        params = {"p": np.array([2.5, -1.0])}
        before = params["p"].copy()
        for _ in range(3):
            adam_step(state, params, {"p": np.zeros(2)})
        assert np.array_equal(params["p"], before)

    def test_shape_mismatch_rejected(self):
        state = AdamState()
        with pytest.raises(ShapeMismatchError):
            adam_step(state, {"p": np.zeros(3)}, {"p": np.zeros(4)})

    def test_descends_on_quadratic(self):
        state = AdamState(lr=0.05)
        params = {"p": np.array([4.0])}
        for _ in range(500):
            adam_step(state, params, {"p": 2.0 * params["p"]})
        assert abs(float(params["p"][0])) < 0.05


class TestLrSchedule:
    def test_stepped_decay_values(self):
        s = LrSchedule()
        assert lr_at(s, 0) == 0.01
        assert lr_at(s, 99) == 0.01
        assert lr_at(s, 100) == pytest.approx(0.008)
        assert lr_at(s, 250) == pytest.approx(0.0064)
        assert lr_at(s, 2050) == pytest.approx(0.01 * 0.8 ** 20)
        assert lr_at(s, 2050) > s.floor
        assert lr_at(s, 2150) == s.floor  # 0.01 * 0.8**21 dips below the floor

    def test_non_increasing(self):
        s = LrSchedule()
        rates = [lr_at(s, e) for e in range(0, 3000, 7)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert all(r >= s.floor for r in rates)

    def test_negative_epoch_rejected(self):
        with pytest.raises(ValueError):
            lr_at(LrSchedule(), -1)


class TestOneHot:
    def test_simple(self):
        out = one_hot(np.array([2, 0, 1]), 3)
        assert np.array_equal(out, [[0, 0, 1], [1, 0, 0], [0, 1, 0]])


class TestEvaluate:
    def test_chunking_does_not_change_result(self):
        model = build(ArchConfig(24, 2, seed=0))
        ds = make_synthetic_dataset()
        full = evaluate(model, ds.test_x, ds.test_y, eval_batch=len(ds.test_y))
        tiny = evaluate(model, ds.test_x, ds.test_y, eval_batch=1)
        assert full[0] == pytest.approx(tiny[0], rel=1e-12)
        assert full[1] == tiny[1]

    def test_oversized_eval_batch_is_capped(self):
        model = build(ArchConfig(24, 2, seed=0))
        ds = make_synthetic_dataset()
        loss, err = evaluate(model, ds.test_x, ds.test_y, eval_batch=10_000)
        assert np.isfinite(loss) and 0.0 <= err <= 1.0


class TestFit:
    def test_rejects_empty_training_split(self):
        model = build(ArchConfig(24, 2))
        ds = make_synthetic_dataset()
        empty = UcrDataset("empty", ds.train_x[:0], ds.train_y[:0],
                           ds.test_x, ds.test_y, ds.label_map)
        with pytest.raises(ValueError, match="empty"):
            fit(model, empty, TrainRun(epochs=1, train_batch=4, eval_batch=4))

    def test_rejects_length_mismatch(self):
        model = build(ArchConfig(23, 2))
        with pytest.raises(ShapeMismatchError):
            fit(model, make_synthetic_dataset(),
                TrainRun(epochs=1, train_batch=4, eval_batch=4))

    def test_zero_epochs_leaves_model_untouched(self):
        model = build(ArchConfig(24, 2, seed=1))
        before = {k: v.copy() for k, v in model.parameters().items()}
        run = fit(model, make_synthetic_dataset(),
                  TrainRun(epochs=0, train_batch=4, eval_batch=4))
        assert run.history == []
        for name, arr in model.parameters().items():
            assert np.array_equal(arr, before[name]), name

    def test_history_records_every_epoch(self):
        model = build(ArchConfig(24, 2, seed=1))
        run = fit(model, make_synthetic_dataset(),
                  TrainRun(epochs=3, train_batch=4, eval_batch=4, seed=5))
        assert [rec.epoch for rec in run.history] == [0, 1, 2]
        assert all(rec.lr == 0.01 for rec in run.history)
        assert all(np.isfinite(rec.train_loss) for rec in run.history)

    def test_deterministic_under_fixed_seed(self):
        results = []
        for _ in range(2):
            model = build(ArchConfig(24, 2, seed=9))
            run = fit(model, make_synthetic_dataset(),
                      TrainRun(epochs=3, train_batch=4, eval_batch=4, seed=9))
            results.append((run, {k: v.copy() for k, v in model.parameters().items()}))
        (run_a, params_a), (run_b, params_b) = results
        assert run_a.history == run_b.history
        for name in params_a:
            assert np.array_equal(params_a[name], params_b[name]), name

    def test_different_seed_changes_trajectory(self):
        def final_loss(seed):
            model = build(ArchConfig(24, 2, seed=9))
            run = fit(model, make_synthetic_dataset(),
                      TrainRun(epochs=2, train_batch=4, eval_batch=4, seed=seed))
            return run.history[-1].train_loss
        assert final_loss(1) != final_loss(2)

    def test_best_checkpoint_written_and_loadable(self, tmp_path):
        model = build(ArchConfig(24, 2, seed=2))
        ckpt = tmp_path / "best.ckpt"
        run = fit(model, make_synthetic_dataset(),
                  TrainRun(epochs=3, train_batch=4, eval_batch=4, seed=2,
                           best_checkpoint_path=str(ckpt)))
        assert ckpt.exists()
        assert run.best_eval_loss == min(rec.eval_loss for rec in run.history)
        loaded = load_checkpoint(ckpt)
        probs, _ = forward(loaded, make_synthetic_dataset().test_x, training=False)
        assert np.allclose(probs.sum(axis=1), 1.0)

    def test_partial_final_batch_is_trained_on(self):
        # 16 train rows with batch 5 -> final mini-batch of 1; must not crash
        model = build(ArchConfig(24, 2, seed=3))
        run = fit(model, make_synthetic_dataset(),
                  TrainRun(epochs=1, train_batch=5, eval_batch=4))
        assert len(run.history) == 1

    def test_learns_separable_synthetic(self):
        model = build(ArchConfig(24, 2, seed=0))
        ds = make_synthetic_dataset(n_train=32, n_test=16)
        run = fit(model, ds, TrainRun(epochs=15, train_batch=8, eval_batch=16, seed=0))
        _, train_err = evaluate(model, ds.train_x, ds.train_y, eval_batch=32)
        assert train_err == 0.0
        assert run.history[-1].eval_error <= 0.25


class TestHistoryCsv:
    def test_format(self, tmp_path):
        path = tmp_path / "history.csv"
        write_history_csv(path, [
            EpochRecord(0, 0.01, 1.234567891, 0.5, 0.125),
            EpochRecord(1, 0.008, 0.9, 0.4, 0.0),
        ])
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,lr,train_loss,eval_loss,eval_error"
        assert lines[1] == "0,0.010000,1.234568,0.500000,0.125000"
        assert lines[2] == "1,0.008000,0.900000,0.400000,0.000000"
