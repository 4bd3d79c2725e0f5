from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vigas.audio import SAMPLE_RATE, StftConfig, Waveform, fft_convolve, write_wav
from vigas.baselines import (TransferFunctionEntry, apply_tf, baseline_dsp, baseline_input_copy,
                             build_tf_database, dsp_transfer, ear_response, fit_dsp_gain,
                             load_hrir_dir, search_gain, tf_estimate, tf_key, tf_nearest_neighbor)
from vigas.dataset import load_split
from vigas.errors import EstimationFailed, InvalidInput
from vigas.geometry import Emitter, Shoebox, Viewpoint
from vigas.rir import binaural_rir
from vigas.scene import Scene
from vigas.speech import synth_speech

STFT = StftConfig(512, 128)


def rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def noise(rng, frames=16000):
    return Waveform(rng.normal(size=(2, frames)))


def two_view_clip(source_yaw=0.0, target_yaw=np.pi):
    """Speaker 1.5 m to the +y side of a listener who turns around between views."""
    room = Shoebox((6, 6, 3), 0.6)
    speaker = Emitter((3, 4.5, 1.5), facing=-np.pi / 2)
    views = (Viewpoint((3, 3, 1.5), yaw=source_yaw), Viewpoint((3, 3, 1.5), yaw=target_yaw))
    scene = Scene(room, (speaker, Emitter((2, 4.5, 1.5))), views, 0)
    dry = synth_speech(np.random.default_rng(0), 1.0)
    src = fft_convolve(dry, binaural_rir(room, speaker, views[0]))
    return SimpleNamespace(clip_id="c", scene=scene, source_view=0, target_view=1, source_audio=src)


class TestInputCopy:
    def test_returns_source(self, small_dataset):
        clip = load_split(small_dataset, "test")[0]
        assert baseline_input_copy(clip) is clip.source_audio


class TestTfEstimate:
    def test_identity_system(self, rng):
        x = noise(rng)
        tf = tf_estimate(x, x, STFT)
        assert tf.shape == (2, 257)
        np.testing.assert_allclose(tf, 1.0, atol=0.05)

    def test_gain_system(self, rng):
        x = noise(rng)
        np.testing.assert_allclose(tf_estimate(x, x.scaled(2.0), STFT), 2.0, atol=0.1)

    def test_delay_phase_slope(self, rng):
        x = noise(rng, 32000)
        k = 4
        y = Waveform(np.pad(x.samples, ((0, 0), (k, 0)))[:, :x.frames])
        tf = tf_estimate(x, y, STFT)
        bins = np.arange(1, 60)
        freqs = bins * SAMPLE_RATE / STFT.window_len
        expected = np.exp(-2j * np.pi * freqs * k / SAMPLE_RATE)
        np.testing.assert_allclose(np.angle(tf[:, bins] / expected), 0.0, atol=0.05)

    def test_single_path_reproduces_target(self, rng):
        x = noise(rng)
        y = fft_convolve(x, Waveform(np.r_[np.zeros(3), 0.7]))
        pred = apply_tf(x, tf_estimate(x, y, STFT), STFT)
        assert rel_l2(pred.samples, y.samples) < 0.10

    def test_unit_response_is_passthrough(self, rng):
        x = noise(rng, 5000)
        np.testing.assert_allclose(apply_tf(x, np.ones((2, 257)), STFT).samples, x.samples, atol=1e-10)

    def test_silent_source(self, rng):
        with pytest.raises(EstimationFailed):
            tf_estimate(Waveform(np.zeros((2, 4000))), noise(rng, 4000), STFT)

    def test_non_finite_entry(self):
        with pytest.raises(InvalidInput):
            TransferFunctionEntry(np.zeros(3), np.full((2, 257), np.nan))


class TestNearestNeighbor:
    def test_brute_force_scan(self, rng):
        db = [TransferFunctionEntry(rng.normal(size=12), np.ones((2, 3))) for _ in range(100)]
        for _ in range(50):
            q = rng.normal(size=12)
            best = min(db, key=lambda e: sum((a - b) ** 2 for a, b in zip(e.key, q)))
            assert tf_nearest_neighbor(db, q) is best

    @given(st.integers(0, 19))
    @settings(max_examples=20, deadline=None)
    def test_stored_key_returns_itself(self, i):
        rng = np.random.default_rng(0)
        db = [TransferFunctionEntry(rng.normal(size=5), np.ones((2, 3))) for _ in range(20)]
        assert tf_nearest_neighbor(db, db[i].key) is db[i]

    def test_single_entry(self, rng):
        e = TransferFunctionEntry(np.zeros(4), np.ones((2, 3)))
        assert tf_nearest_neighbor([e], rng.normal(size=4)) is e

    def test_empty_and_mismatched(self):
        with pytest.raises(InvalidInput):
            tf_nearest_neighbor([], np.zeros(3))
        with pytest.raises(InvalidInput):
            tf_nearest_neighbor([TransferFunctionEntry(np.zeros(4), np.ones((1, 1)))], np.zeros(3))

    def test_keys_by_protocol(self, small_dataset):
        clip = load_split(small_dataset, "train")[0]
        assert tf_key(clip, "single").shape == (21,)
        assert tf_key(clip, "novel").shape == (12,)
        with pytest.raises(InvalidInput):
            tf_key(clip, "other")

    def test_database_from_split(self, small_dataset):
        clips = load_split(small_dataset, "train")
        db = build_tf_database(clips, "novel", STFT)
        assert len(db) == len(clips)
        assert tf_nearest_neighbor(db, tf_key(clips[1], "novel")) is db[1]


class TestDsp:
    def test_identical_geometry_cancels(self):
        clip = two_view_clip(0.0, 0.0)
        out = baseline_dsp(clip, 1.0)
        assert rel_l2(out.samples, clip.source_audio.samples) < 0.05

    def test_left_right_swap_flips_louder_channel(self):
        clip = two_view_clip(0.0, np.pi)
        e_src = (clip.source_audio.samples ** 2).sum(axis=1)
        e_out = (baseline_dsp(clip, 1.0).samples ** 2).sum(axis=1)
        assert e_src[0] > e_src[1]
        assert e_out[1] > e_out[0]

    def test_gain_scales_output(self):
        clip = two_view_clip()
        np.testing.assert_allclose(baseline_dsp(clip, 3.0).samples, 3.0 * baseline_dsp(clip, 1.0).samples)

    def test_missing_geometry(self):
        with pytest.raises(InvalidInput):
            baseline_dsp(SimpleNamespace(clip_id="x", scene=None, source_view=0, target_view=1,
                                         source_audio=Waveform(np.zeros((2, 10)))))

    def test_transfer_keeps_length(self, rng):
        out = dsp_transfer(noise(rng, 777), Waveform(rng.normal(size=(2, 40))), Waveform(rng.normal(size=(2, 90))))
        assert out.samples.shape == (2, 777)


class TestGainSearch:
    @pytest.mark.parametrize("target", [0.05, 1.0, 3.7, 60.0])
    def test_finds_minimum_on_log_scale(self, target):
        g = search_gain(lambda x: abs(np.log(x) - np.log(target)))
        assert g == pytest.approx(target, rel=1e-3)

    def test_deterministic_on_validation_split(self, small_dataset):
        val = load_split(small_dataset, "val")
        a, b = fit_dsp_gain(val, STFT), fit_dsp_gain(val, STFT)
        assert a == b and 0.01 <= a <= 100

    def test_empty_validation(self):
        assert fit_dsp_gain([], STFT) == 1.0


class TestHrirLoader:
    def write_set(self, root):
        for az, el, lag in ((0, 0, 0), (90, 0, 3), (-90, 0, 5)):
            left, right = np.zeros(16), np.zeros(16)
            left[lag], right[15 - lag] = 0.5, 0.25
            write_wav(root / f"{az}_{el}_L.wav", Waveform(left))
            write_wav(root / f"{az}_{el}_R.wav", Waveform(right))
        write_wav(root / "45_0_L.wav", Waveform(np.zeros(16)))  # unpaired, ignored

    def test_load_and_nearest(self, tmp_path):
        self.write_set(tmp_path)
        hrirs = load_hrir_dir(tmp_path)
        assert len(hrirs.responses) == 3
        h = hrirs.nearest(80.0, 5.0)
        assert np.argmax(np.abs(h.samples[0])) == 3

    def test_empty_dir(self, tmp_path):
        with pytest.raises(InvalidInput):
            load_hrir_dir(tmp_path)

    def test_ear_response_with_hrirs(self, tmp_path):
        self.write_set(tmp_path)
        hrirs = load_hrir_dir(tmp_path)
        clip = two_view_clip()
        view = clip.scene.viewpoints[0]
        h = ear_response(clip.scene, clip.scene.active, view, hrirs)
        d = np.linalg.norm(clip.scene.active.position - view.position)
        onset = int(np.flatnonzero(np.abs(h.samples[0]) > 1e-9)[0])
        assert abs(onset - (d / 343.0 * SAMPLE_RATE + 3)) <= 1
