import numpy as np
import pytest

import chainplan.gradtape as gt
from chainplan.denoiser import (Adam, CheckpointMismatch, EmaPair, Trainer, init_denoiser,
                                load_checkpoint, make_pair, predict_x0, save_checkpoint,
                                time_embed, train_step)
from chainplan.schedule import build_linear_schedule


def small_model(rng=None):
    return init_denoiser(3, 2, hidden=(16, 16), time_dim=4,
                         rng=rng or np.random.default_rng(0))


def randomize(model, rng):
    for w in model.weights:
        w[:] = rng.standard_normal(w.shape) * 0.3
    for b in model.biases:
        b[:] = rng.standard_normal(b.shape) * 0.1


class TestTimeEmbed:
    def test_t_zero_is_sin0_cos1(self):
        e = time_embed(np.zeros(1), 500, 8)[0]
        np.testing.assert_allclose(e[0::2], 0.0)
        np.testing.assert_allclose(e[1::2], 1.0)

    def test_pure_function(self):
        a = time_embed(np.array([137.0]), 500, 16)
        b = time_embed(np.array([137.0]), 500, 16)
        assert np.array_equal(a, b)

    def test_t_equals_T_matches_direct_formula(self):
        T, dim = 500, 4
        e = time_embed(np.array([float(T)]), T, dim)[0]
        freqs = np.geomspace(1.0, 100.0, dim // 2)
        args = 2.0 * np.pi * freqs * 1.0
        np.testing.assert_allclose(e, np.stack([np.sin(args), np.cos(args)], axis=1).ravel(),
                                   atol=1e-12)

    def test_range_and_odd_dim(self):
        e = time_embed(np.linspace(0, 500, 20), 500, 32)
        assert np.all(np.abs(e) <= 1.0 + 1e-12)
        with pytest.raises(ValueError):
            time_embed(np.zeros(1), 500, 7)


class TestForward:
    def test_zero_output_layer_gives_zero(self):
        model = small_model()
        out = predict_x0(model, np.random.default_rng(1).standard_normal((4, 6)),
                         np.full(4, 10), 500)
        np.testing.assert_array_equal(out, 0.0)

    def test_identical_rows_identical_outputs(self):
        model = small_model()
        randomize(model, np.random.default_rng(2))
        row = np.random.default_rng(3).standard_normal(6)
        out = predict_x0(model, np.stack([row, row]), np.full(2, 50), 500)
        assert np.array_equal(out[0], out[1])

    def test_gradient_matches_finite_differences(self):
        model = small_model()
        randomize(model, np.random.default_rng(4))
        x = np.random.default_rng(5).standard_normal((3, 6))
        t = np.full(3, 123)

        tape = gt.Tape()
        xt = tape.leaf(x)
        loss = gt.tsum(gt.square(predict_x0(model, xt, t, 500)))
        grad = gt.backward(loss, [xt])[0]

        h = 1e-6
        num = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            fp = np.sum(predict_x0(model, xp, t, 500) ** 2)
            fm = np.sum(predict_x0(model, xm, t, 500) ** 2)
            num[idx] = (fp - fm) / (2 * h)
        np.testing.assert_allclose(grad, num, rtol=1e-3, atol=1e-8)


class TestTraining:
    def test_memorizes_constant_chunk(self):
        sched = build_linear_schedule(100)
        pair = make_pair(small_model())
        trainer = Trainer(pair, sched, opt=Adam(pair.latest.params(), lr=1e-2))
        target = np.tile(np.array([[0.3, -0.7, 1.1, 0.0, -0.2, 0.5]]), (32, 1))
        rng = np.random.default_rng(0)
        for _ in range(2000):
            loss = train_step(trainer, target, rng)
        # average over t includes high-noise steps; check the low-noise end
        pred = predict_x0(pair.latest, target, np.full(32, 1), sched.T)
        assert np.mean((pred - target) ** 2) < 1e-3

    def test_loss_non_negative(self):
        sched = build_linear_schedule(50)
        pair = make_pair(small_model())
        trainer = Trainer(pair, sched)
        loss = train_step(trainer, np.zeros((8, 6)), np.random.default_rng(0))
        assert loss >= 0.0

    def test_ema_decay_one_is_fixed_point(self):
        sched = build_linear_schedule(50)
        pair = make_pair(small_model(), decay=1.0)
        frozen = [w.copy() for w in pair.ema.weights]
        trainer = Trainer(pair, sched, opt=Adam(pair.latest.params(), lr=1e-2))
        rng = np.random.default_rng(0)
        for _ in range(5):
            train_step(trainer, rng.standard_normal((8, 6)), rng)
        for w0, w1 in zip(frozen, pair.ema.weights):
            assert np.array_equal(w0, w1)

    def test_ema_tracks_latest_at_decay_zero(self):
        sched = build_linear_schedule(50)
        pair = make_pair(small_model(), decay=0.0)
        trainer = Trainer(pair, sched, opt=Adam(pair.latest.params(), lr=1e-2))
        rng = np.random.default_rng(0)
        train_step(trainer, rng.standard_normal((8, 6)), rng)
        for a, b in zip(pair.ema.weights, pair.latest.weights):
            np.testing.assert_allclose(a, b)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        sched = build_linear_schedule(100)
        pair = make_pair(small_model())
        randomize(pair.latest, np.random.default_rng(1))
        randomize(pair.ema, np.random.default_rng(2))
        path = tmp_path / "ck.npz"
        save_checkpoint(path, pair, sched)
        back = load_checkpoint(path, sched)
        for a, b in zip(pair.ema.weights + pair.latest.weights,
                        back.ema.weights + back.latest.weights):
            assert np.array_equal(a, b)

    def test_schedule_mismatch_refused(self, tmp_path):
        pair = make_pair(small_model())
        path = tmp_path / "ck.npz"
        save_checkpoint(path, pair, build_linear_schedule(100))
        with pytest.raises(CheckpointMismatch):
            load_checkpoint(path, build_linear_schedule(200))
