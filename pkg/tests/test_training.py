from dataclasses import replace
from datetime import datetime, timedelta

import numpy as np
import pytest

from tensoraug.data import RawSeries, prepare
from tensoraug.errors import DataError, NumericalError, ShapeError
from tensoraug.model import ModelConfig, init_params
from tensoraug.training import (AdamState, OptimConfig, TrainConfig, adam_step, evaluate, gradcheck,
                                loss_and_grad, mae, mse, persistence_forecast, sgd_step, split_arrays, train)

TINY = ModelConfig(seq_len=8, label_len=4, pred_len=4, n_features=4, model_len=2, d_model=4, d_attn=3,
                   n_heads=2, enc_layers=2, dec_layers=1, ranks=(3, 2, 2), seed=2)


def ar1_series(n=600, seed=0):
    """Vectorised 2x2 matrix AR(1), X_t = A X_{t-1} B^T + noise, with an oscillating A.

    A damped rotation keeps the process far from a random walk, so the
    last-value forecast is a meaningful (not near-optimal) baseline.
    """
    rng = np.random.default_rng(seed)
    th = np.pi / 3
    a = 0.9 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    b = np.array([[0.9, 0.2], [-0.2, 0.9]])
    x = np.zeros((n, 2, 2))
    for t in range(1, n):
        x[t] = a @ x[t - 1] @ b.T + rng.normal(scale=0.3, size=(2, 2))
    t0 = datetime(2020, 1, 1)
    return RawSeries(tuple(t0 + timedelta(hours=i) for i in range(n)), x.reshape(n, 4), ("a", "b", "c", "d"))


def batch_for(cfg, rng, n=3):
    return (rng.standard_normal((n, cfg.seq_len, cfg.n_features)), rng.standard_normal((n, cfg.label_len, cfg.n_features)),
            rng.standard_normal((n, cfg.pred_len, cfg.n_features)))


class TestGradients:
    def test_zero_depth_matches_linear_regression(self, rng):
        cfg = TINY.with_(enc_layers=0, dec_layers=0)
        params = init_params(cfg)
        enc, seed, target = batch_for(cfg, rng)
        loss, grads = loss_and_grad(params, (enc, seed, target), cfg)
        # head input: mean over the hidden mode of the decoder embedding, last pred_len rows
        dec_in = np.concatenate([seed, np.zeros((3, cfg.pred_len, cfg.n_features))], axis=1)
        v = dec_in @ params["dec_emb.value"]
        h = (params["dec_emb.expand"].mean() * v + params["dec_emb.pos"].mean(axis=1))[:, -cfg.pred_len:]
        x = h.reshape(-1, cfg.d_model)
        y = target.reshape(-1, cfg.n_features)
        resid = x @ params["head.weight"] + params["head.bias"] - y
        n = resid.size
        assert loss == pytest.approx(np.sum(resid ** 2) / n, rel=1e-12)
        np.testing.assert_allclose(grads["head.weight"], 2 * x.T @ resid / n, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(grads["head.bias"], 2 * resid.sum(axis=0) / n, rtol=1e-10, atol=1e-14)
        assert not any(k.startswith("enc") and not k.startswith("enc_emb") for k in grads)
        assert not grads["enc_emb.value"].any()

    def test_stationary_point(self, rng):
        cfg = TINY
        params = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
        params["head.bias"] = rng.standard_normal(cfg.n_features)
        enc, seed, _ = batch_for(cfg, rng)
        target = np.broadcast_to(params["head.bias"], (3, cfg.pred_len, cfg.n_features)).copy()
        loss, grads = loss_and_grad(params, (enc, seed, target), cfg)
        assert loss == 0.0
        for g in grads.values():
            np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_gradient_keys_match_params(self, rng):
        params = init_params(TINY)
        _, grads = loss_and_grad(params, batch_for(TINY, rng), TINY)
        assert set(grads) == set(params)
        for k in params:
            assert grads[k].shape == params[k].shape

    @pytest.mark.parametrize("variant", [{}, {"tea_decoder": True}, {"tea_encoder": False}])
    def test_finite_differences_subset(self, rng, variant):
        cfg = TINY.with_(**variant)
        names = ["enc_emb.expand", "enc0.attn.w_H", "enc1.ln.gain", "dec0.self.h1.W_O", "dec0.cross.h0.W_K",
                 "dec_emb.value", "head.weight"]
        results = gradcheck(init_params(cfg), batch_for(cfg, rng, 2), cfg, names=names)
        for r in results:
            assert r.passed, (r.name, r.max_rel_error)

    def test_non_finite_loss(self, rng):
        params = init_params(TINY)
        params["head.bias"] = np.full(TINY.n_features, np.inf)
        with pytest.raises(NumericalError) as info:
            loss_and_grad(params, batch_for(TINY, rng), TINY, step=17)
        assert info.value.step == 17


class TestOptimizers:
    def test_sgd_zero_grad(self):
        p = {"w": np.array([1.0, -2.0])}
        np.testing.assert_array_equal(sgd_step(p, {"w": np.zeros(2)}, OptimConfig(lr=0.5))["w"], p["w"])

    def test_sgd_scalar(self):
        out = sgd_step({"w": np.array(3.0)}, {"w": np.array(1.0)}, OptimConfig(lr=0.1))
        assert out["w"] == pytest.approx(2.9, abs=1e-15)

    def test_adam_zero_grad(self):
        p = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        np.testing.assert_array_equal(adam_step(p, {"w": np.zeros(2)}, OptimConfig(lr=0.1), state)["w"], p["w"])
        assert state.t == 1

    def test_adam_first_step_is_lr_sized(self):
        out = adam_step({"w": np.array([0.0, 0.0])}, {"w": np.array([3.0, -0.5])}, OptimConfig(lr=0.01), AdamState())
        np.testing.assert_allclose(out["w"], [-0.01, 0.01], rtol=1e-6)

    def test_adam_quadratic_bowl(self, rng):
        target = rng.standard_normal(5)
        p = {"w": np.zeros(5)}
        state, hyper = AdamState(), OptimConfig(lr=0.1)
        for _ in range(200):
            p = adam_step(p, {"w": 2 * (p["w"] - target)}, hyper, state)
        assert np.linalg.norm(p["w"] - target) < 1e-3

    def test_negative_lr_rejected(self):
        with pytest.raises(ValueError):
            OptimConfig(lr=-1.0)


class TestMetrics:
    def test_equal(self, rng):
        a = rng.standard_normal((3, 4))
        assert mse(a, a) == 0.0 and mae(a, a) == 0.0

    def test_unit_offset(self, rng):
        a = rng.standard_normal((3, 4))
        assert mse(a + 1, a) == pytest.approx(1.0) and mae(a + 1, a) == pytest.approx(1.0)

    def test_loop_oracle(self, rng):
        a, b = rng.standard_normal((2, 5, 3))
        sq = ab = 0.0
        for x, y in zip(a.ravel(), b.ravel()):
            sq += (x - y) ** 2
            ab += abs(x - y)
        assert mse(a, b) == pytest.approx(sq / a.size, rel=1e-12)
        assert mae(a, b) == pytest.approx(ab / a.size, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse(np.zeros(3), np.zeros(4))

    def test_persistence(self):
        enc = np.arange(12.0).reshape(1, 4, 3)
        np.testing.assert_array_equal(persistence_forecast(enc, 2), [[[9, 10, 11], [9, 10, 11]]])


class TestTrainLoop:
    def setup_method(self):
        self.ds = prepare(ar1_series(), "ar1", seq_len=TINY.seq_len)

    def test_lr_zero_keeps_params(self):
        cfg = TrainConfig(TINY, lr=0.0, optimizer="sgd", max_epochs=2, patience=5, batch_size=64)
        params, report = train(cfg, self.ds)
        for k, v in init_params(TINY).items():
            np.testing.assert_array_equal(params[k], v)
        losses = [e.train_loss for e in report.epochs]
        assert losses[0] == pytest.approx(losses[1], rel=1e-12)

    def test_same_seed_same_report(self):
        cfg = TrainConfig(TINY, max_epochs=2, batch_size=64)
        _, a = train(cfg, self.ds)
        _, b = train(cfg, self.ds)
        assert a == b

    def test_small_step_decreases_loss(self, rng):
        params = init_params(TINY)
        batch = split_arrays(self.ds.train, TINY)
        loss, grads = loss_and_grad(params, batch, TINY)
        after, _ = loss_and_grad(sgd_step(params, grads, OptimConfig(lr=1e-3)), batch, TINY)
        assert after < loss

    def test_beats_persistence_on_ar1(self):
        cfg = TrainConfig(TINY, lr=3e-3, max_epochs=8, batch_size=32, patience=8)
        params, report = train(cfg, self.ds)
        enc, _, target = val = split_arrays(self.ds.val, TINY)
        persistence = mse(persistence_forecast(enc, TINY.pred_len), target)
        assert evaluate(params, val, TINY)[0] == pytest.approx(report.best_val_mse)
        assert report.best_val_mse < persistence

    def test_empty_split(self):
        tiny = prepare(ar1_series(40), "short", ratios=(0.5, 0.25, 0.25))
        with pytest.raises(DataError):
            train(TrainConfig(TINY.with_(seq_len=16, label_len=4)), tiny)

    def test_report_csv(self, tmp_path):
        _, report = train(TrainConfig(TINY, max_epochs=1, batch_size=128), self.ds)
        report.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_mse,val_mae,seconds"
        assert len(lines) == 2
