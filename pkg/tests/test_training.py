import dataclasses
import math

import numpy as np
import pytest
import torch

from gradcheck import random_batch
from vigas.alignment import gcc_phat
from vigas.audio import StftConfig, Waveform
from vigas.dataset import load_split
from vigas.errors import InvalidConfig, InvalidInput
from vigas.net import gradient, load_checkpoint, tiny_config
from vigas.training import (TrainConfig, enhancement_target, epoch_order, init_network, loss, loss_fn,
                            make_optimizer, prepare_example, read_log, train, train_step)

STFT = StftConfig(512, 128)


def tiny_train_config(**kw):
    base = dict(epochs=2, batch_size=2, seed=1, net=tiny_config())
    base.update(kw)
    return TrainConfig(**base)


def naive_impulse_loss(n0, frames, window_len=512, hop=128):
    """Mean STFT magnitude of a unit impulse, by an explicit DFT per frame."""
    x = np.zeros(frames)
    x[n0] = 1.0
    pad = window_len // 2
    padded = np.pad(x, pad, mode="reflect")
    n = np.arange(window_len)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * n / window_len)
    k = np.arange(window_len // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * n / window_len)
    mags = [np.abs(basis @ (padded[f * hop:f * hop + window_len] * w))
            for f in range(math.ceil(frames / hop))]
    return float(np.mean(mags))


class TestLoss:
    def test_identical_is_zero(self, rng):
        a = Waveform(rng.normal(size=(2, 3000)))
        assert loss(a, a, STFT) == 0.0

    def test_symmetric(self, rng):
        a, b = Waveform(rng.normal(size=(2, 3000))), Waveform(rng.normal(size=(2, 3000)))
        assert loss(a, b, STFT) == pytest.approx(loss(b, a, STFT), rel=1e-15)

    def test_impulse_against_naive_dft(self):
        frames, n0 = 2048, 1000
        impulse = np.zeros((1, frames))
        impulse[0, n0] = 1.0
        got = loss(Waveform(np.zeros((1, frames))), Waveform(impulse), STFT)
        assert got == pytest.approx(naive_impulse_loss(n0, frames), rel=1e-12)

    def test_non_negative_and_zero_only_for_equal_magnitudes(self, rng):
        a = Waveform(rng.normal(size=(2, 2000)))
        assert loss(a, a.scaled(-1.0), STFT) == pytest.approx(0.0, abs=1e-12)
        assert loss(a, a.scaled(1.01), STFT) > 0

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInput):
            loss(Waveform(np.zeros((2, 100))), Waveform(np.zeros((2, 101))), STFT)


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [dict(learning_rate=0.0), dict(epochs=0), dict(batch_size=0),
                                    dict(dtype="float16"), dict(hop=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfig):
            TrainConfig(**kw)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.learning_rate, cfg.epochs, cfg.batch_size) == (0.001, 200, 16)


class TestOptimizer:
    def test_vanishing_learning_rate_keeps_params(self, rng):
        cfg = tiny_train_config(learning_rate=1e-14)
        net = init_network(dataclasses.replace(cfg, dtype="float64"))
        before = net.flat()
        opt = make_optimizer(net, cfg)
        train_step(net, opt, random_batch(rng, net.cfg, 800), cfg)
        np.testing.assert_allclose(net.flat(), before, rtol=0, atol=1e-12)

    def test_zero_gradient_keeps_params(self):
        cfg = tiny_train_config()
        net = init_network(cfg)
        before = net.flat()
        opt = make_optimizer(net, cfg)
        for p in net.parameters():
            p.grad = torch.zeros_like(p)
        opt.step()
        np.testing.assert_array_equal(net.flat(), before)

    def test_every_group_receives_gradient(self, rng):
        cfg = tiny_train_config()
        net = init_network(cfg)
        gradient(net, random_batch(rng, net.cfg, 1600, lags=(0, 3)), loss_fn(cfg))
        for name, module in net.parameter_groups().items():
            norm = sum(float(p.grad.norm()) for p in module.parameters())
            assert norm > 0, name

    def test_overfit_one_clip_descends(self, rng):
        cfg = tiny_train_config(dtype="float64")
        net = init_network(cfg)
        opt = make_optimizer(net, cfg)
        batch = random_batch(rng, net.cfg, 1600)
        losses = [train_step(net, opt, batch, cfg) for _ in range(51)]
        assert losses[-1] < losses[0]


class TestPrepareExample:
    def test_lag_from_source_and_target(self, small_dataset):
        rec = load_split(small_dataset, "train")[0]
        cfg = tiny_train_config()
        ex = prepare_example(rec, cfg)
        assert ex.lag == gcc_phat(rec.source_audio.to_stereo(), rec.target_audio.to_stereo(), cfg.max_lag).lag
        assert prepare_example(rec, dataclasses.replace(cfg, align=False)).lag == 0

    def test_enhancement_uses_clean_track_and_emitter_pose(self, small_dataset):
        recs = load_split(small_dataset, "train")
        cfg = tiny_train_config(enhancement_mode=True)
        examples = [prepare_example(r, cfg) for r in recs]
        assert len(examples) == len([prepare_example(r, tiny_train_config()) for r in recs])
        rec, ex = recs[0], examples[0]
        np.testing.assert_array_equal(enhancement_target(rec).samples[0], enhancement_target(rec).samples[1])
        np.testing.assert_allclose(ex.pose, rec.emitter_pose, rtol=1e-6)

    def test_missing_clean_track(self, small_dataset):
        rec = dataclasses.replace(load_split(small_dataset, "train")[0], clean_emitter_audio=None)
        with pytest.raises(InvalidInput):
            enhancement_target(rec)


class TestTrainLoop:
    def test_outputs_and_best_checkpoint(self, small_dataset, tmp_path):
        result = train(tiny_train_config(epochs=3), small_dataset, tmp_path)
        log = read_log(tmp_path / "train_log.csv")
        assert [r["epoch"] for r in log] == [1, 2, 3]
        assert result.best_val_loss == min(r["val_loss"] for r in log)
        assert result.best_checkpoint.exists() and result.last_checkpoint.exists()
        best = load_checkpoint(result.best_checkpoint)
        assert best.cfg == tiny_config()

    def test_same_seed_same_log(self, small_dataset, tmp_path):
        train(tiny_train_config(), small_dataset, tmp_path / "a")
        train(tiny_train_config(), small_dataset, tmp_path / "b")
        assert (tmp_path / "a" / "train_log.csv").read_text() == (tmp_path / "b" / "train_log.csv").read_text()

    def test_resume_matches_uninterrupted_run(self, small_dataset, tmp_path):
        train(tiny_train_config(epochs=1), small_dataset, tmp_path / "r")
        resumed = train(tiny_train_config(epochs=3), small_dataset, tmp_path / "r")
        straight = train(tiny_train_config(epochs=3), small_dataset, tmp_path / "s")
        assert [r["epoch"] for r in resumed.history] == [1, 2, 3]
        assert resumed.history == straight.history
        assert (tmp_path / "r" / "last.ckpt").read_bytes() == (tmp_path / "s" / "last.ckpt").read_bytes()

    def test_resume_rejects_other_architecture(self, small_dataset, tmp_path):
        train(tiny_train_config(epochs=1), small_dataset, tmp_path)
        with pytest.raises(InvalidConfig):
            train(tiny_train_config(epochs=2, net=tiny_config(channels=4)), small_dataset, tmp_path)

    def test_epoch_order_is_seeded_permutation(self):
        cfg = tiny_train_config()
        a = epoch_order(cfg, 3, 10)
        np.testing.assert_array_equal(a, epoch_order(cfg, 3, 10))
        assert sorted(a) == list(range(10))
        assert not np.array_equal(a, epoch_order(cfg, 4, 10))
