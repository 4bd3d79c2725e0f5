"""Non-learned baselines: input copy, nearest-neighbour transfer functions, and an ear-model DSP chain."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import signal

from .audio import DEFAULT_STFT, Spectrogram, StftConfig, Waveform, istft, read_wav, stft
from .errors import EstimationFailed, InvalidInput
from .geometry import Emitter, Viewpoint, angle_features, relative_pose
from .rir import direct_path_rir, place_taps
from .spectral import stft_magnitude

TF_REGULARIZATION = 1e-3
DSP_REGULARIZATION = 1e-3
GAIN_RANGE = (0.01, 100.0)
GAIN_ITERATIONS = 20


def baseline_input_copy(clip) -> Waveform:
    return clip.source_audio


# ---------------------------------------------------------------- transfer functions

@dataclass(frozen=True, eq=False)
class TransferFunctionEntry:
    key: np.ndarray
    tf: np.ndarray  # [channels, freq_bins] complex

    def __post_init__(self):
        if not np.all(np.isfinite(self.tf)):
            raise InvalidInput("transfer function has non-finite bins")


def tf_estimate(src: Waveform, tgt: Waveform, stft_cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Channel-diagonal Wiener estimate ``S_xy / (S_xx + lambda)`` from Welch spectra."""
    if src.samples.shape != tgt.samples.shape:
        raise InvalidInput(f"shape mismatch {src.samples.shape} vs {tgt.samples.shape}")
    kw = dict(nperseg=stft_cfg.window_len, noverlap=stft_cfg.window_len - stft_cfg.hop,
              window="hann", detrend=False)
    out = []
    for x, y in zip(src.samples, tgt.samples):
        _, sxx = signal.welch(x, **kw)
        if sxx.sum() <= 0:
            raise EstimationFailed("source channel is silent")
        _, sxy = signal.csd(x, y, **kw)
        out.append(sxy / (sxx + TF_REGULARIZATION * sxx.mean()))
    return np.stack(out)


def apply_tf(src: Waveform, tf: np.ndarray, stft_cfg: StftConfig = DEFAULT_STFT) -> Waveform:
    s = stft(src, stft_cfg.window_len, stft_cfg.hop)
    if tf.shape != s.bins.shape[:2]:
        raise InvalidInput(f"transfer function shape {tf.shape} does not match {s.bins.shape[:2]}")
    return istft(Spectrogram(s.bins * tf[:, :, None], s.window_len, s.hop, s.sample_rate, s.frames))


def tf_key(clip, protocol: str) -> np.ndarray:
    """Lookup key: absolute geometry for one environment, relative geometry across environments."""
    src = clip.scene.viewpoints[clip.source_view]
    tgt = clip.scene.viewpoints[clip.target_view]
    speaker = clip.scene.active.position
    if protocol == "single":
        return np.concatenate([speaker, angle_features(src), angle_features(tgt)])
    if protocol == "novel":
        return np.concatenate([relative_pose(src, tgt), src.to_local(speaker)])
    raise InvalidInput(f"unknown protocol {protocol!r}")


def tf_nearest_neighbor(db, query_key) -> TransferFunctionEntry:
    if not db:
        raise InvalidInput("transfer-function database is empty")
    keys = np.stack([e.key for e in db])
    q = np.asarray(query_key, dtype=np.float64)
    if keys.shape[1] != q.shape[0]:
        raise InvalidInput(f"query key has {q.shape[0]} dims, database keys have {keys.shape[1]}")
    return db[int(np.argmin(np.linalg.norm(keys - q, axis=1)))]


def build_tf_database(clips, protocol: str, stft_cfg: StftConfig = DEFAULT_STFT) -> list:
    db = []
    for c in clips:
        try:
            tf = tf_estimate(c.source_audio.to_stereo(), c.target_audio.to_stereo(), stft_cfg)
        except EstimationFailed:
            continue
        db.append(TransferFunctionEntry(tf_key(c, protocol), tf))
    return db


def baseline_tf(clip, db, protocol: str, stft_cfg: StftConfig = DEFAULT_STFT) -> Waveform:
    entry = tf_nearest_neighbor(db, tf_key(clip, protocol))
    return apply_tf(clip.source_audio.to_stereo(), entry.tf, stft_cfg)


# ---------------------------------------------------------------- ear-model DSP

@dataclass
class HrirSet:
    """Measured head responses indexed by (azimuth, elevation) in degrees.

    Loaded from a directory of ``<az>_<el>_L.wav`` / ``<az>_<el>_R.wav`` pairs.
    """

    directions: np.ndarray  # [n, 2] degrees
    responses: list         # stereo Waveforms

    def nearest(self, azimuth: float, elevation: float) -> Waveform:
        az, el = np.radians(self.directions.T)
        qa, qe = math.radians(azimuth), math.radians(elevation)
        cos_sep = np.sin(el) * math.sin(qe) + np.cos(el) * math.cos(qe) * np.cos(az - qa)
        return self.responses[int(np.argmax(cos_sep))]


_HRIR_NAME = re.compile(r"^(-?\d+(?:\.\d+)?)_(-?\d+(?:\.\d+)?)_([LR])\.wav$")


def load_hrir_dir(path) -> HrirSet:
    pairs: dict = {}
    for f in sorted(Path(path).iterdir()):
        m = _HRIR_NAME.match(f.name)
        if m:
            pairs.setdefault((float(m[1]), float(m[2])), {})[m[3]] = read_wav(f)
    complete = {k: v for k, v in pairs.items() if set(v) == {"L", "R"}}
    if not complete:
        raise InvalidInput(f"{path}: no complete <az>_<el>_{{L,R}}.wav pairs")
    dirs, resp = [], []
    for (az, el), ch in sorted(complete.items()):
        n = max(ch["L"].frames, ch["R"].frames)
        stereo = np.zeros((2, n))
        stereo[0, :ch["L"].frames] = ch["L"].samples[0]
        stereo[1, :ch["R"].frames] = ch["R"].samples[0]
        dirs.append((az, el))
        resp.append(Waveform(stereo, ch["L"].sample_rate))
    return HrirSet(np.array(dirs), resp)


def ear_response(scene, emitter: Emitter, view: Viewpoint, hrirs: HrirSet | None = None,
                 fs: int = 16000) -> Waveform:
    """Direct-path response from the emitter to both ears of ``view``."""
    if hrirs is None:
        return direct_path_rir(scene.room, emitter, view, fs)
    local = view.to_local(emitter.position)
    d = float(np.linalg.norm(local))
    az = math.degrees(math.atan2(local[1], local[0]))
    el = math.degrees(math.asin(local[2] / d))
    head = hrirs.nearest(az, el)
    delay = d / scene.room.speed_of_sound * fs
    path = place_taps(np.array([delay]), np.array([1 / (4 * np.pi * d)]), int(delay) + 2)
    return Waveform(np.stack([np.convolve(path, h) for h in head.samples]), fs)


def _freq(h: np.ndarray, n: int) -> np.ndarray:
    return np.fft.rfft(h, n=n, axis=-1)


def dsp_transfer(source: Waveform, h_src: Waveform, h_tgt: Waveform) -> Waveform:
    """Per ear: regularized inverse of the source response, then the target response."""
    n = source.frames + max(h_src.frames, h_tgt.frames)
    hs, ht = _freq(h_src.samples, n), _freq(h_tgt.samples, n)
    power = np.abs(hs) ** 2
    lam = DSP_REGULARIZATION * power.max(axis=-1, keepdims=True)
    y = _freq(source.to_stereo().samples, n)
    out = np.fft.irfft(y * np.conj(hs) * ht / (power + lam), n=n, axis=-1)
    return Waveform(out[:, :source.frames], source.sample_rate)


def baseline_dsp(clip, gain: float = 1.0, hrirs: HrirSet | None = None) -> Waveform:
    """Undo the source-view ear response, apply the target-view one, scale by ``gain``."""
    scene = getattr(clip, "scene", None)
    if scene is None or clip.source_view is None or clip.target_view is None:
        raise InvalidInput(f"{getattr(clip, 'clip_id', '?')}: speaker/viewpoint geometry missing")
    emitter = scene.active
    h_src = ear_response(scene, emitter, scene.viewpoints[clip.source_view], hrirs)
    h_tgt = ear_response(scene, emitter, scene.viewpoints[clip.target_view], hrirs)
    return dsp_transfer(clip.source_audio, h_src, h_tgt).scaled(gain)


def search_gain(objective, lo: float = GAIN_RANGE[0], hi: float = GAIN_RANGE[1],
                iterations: int = GAIN_ITERATIONS) -> float:
    """Log-scale bisection on the sign of the objective's slope."""
    a, b = math.log(lo), math.log(hi)
    step = 1e-3
    for _ in range(iterations):
        m = 0.5 * (a + b)
        if objective(math.exp(m + step)) < objective(math.exp(m - step)):
            a = m
        else:
            b = m
    return math.exp(0.5 * (a + b))


def fit_dsp_gain(val_clips, stft_cfg: StftConfig = DEFAULT_STFT, hrirs: HrirSet | None = None) -> float:
    """Gain minimizing mean magnitude distance on the validation clips."""
    if not val_clips:
        return 1.0
    preds = np.stack([baseline_dsp(c, 1.0, hrirs).samples for c in val_clips])
    tgts = np.stack([c.target_audio.to_stereo().samples for c in val_clips])
    # magnitudes are linear in the gain, so they are computed once
    mp = stft_magnitude(torch.from_numpy(preds), stft_cfg).numpy()
    mt = stft_magnitude(torch.from_numpy(tgts), stft_cfg).numpy()
    return search_gain(lambda g: float(np.mean(np.abs(g * mp - mt))))
