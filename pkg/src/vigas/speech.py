"""Deterministic speech-like test signals (glottal pulse train through formant resonators)."""

from __future__ import annotations

import numpy as np
from scipy import signal

from .audio import SAMPLE_RATE, Waveform
from .errors import InvalidInput

F0_RANGE = (85.0, 255.0)
PEAK = 0.5
NOISE_FLOOR_DB = -30.0


def _resonator(freq: float, bandwidth: float, fs: int):
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    # zeros at DC and Nyquist keep the output free of sub-audio drift
    b = [(1 - r * r) / 2, 0.0, -(1 - r * r) / 2]
    return b, a


def _syllable_envelope(rng, n: int, fs: int) -> tuple[np.ndarray, list[tuple[int, int]]]:
    env = np.zeros(n)
    spans = []
    t = int(rng.uniform(0.0, 0.08) * fs)
    while t < n:
        length = int(rng.uniform(0.10, 0.30) * fs)
        end = min(n, t + length)
        env[t:end] = signal.windows.tukey(length, 0.5)[:end - t] * rng.uniform(0.6, 1.0)
        spans.append((t, end))
        t = end + int(rng.uniform(0.03, 0.15) * fs)
    return env, spans


def synth_speech(rng: np.random.Generator, duration: float, fs: int = SAMPLE_RATE) -> Waveform:
    """Speech-like mono signal, peak-normalized to 0.5.

    Sawtooth glottal pulses follow a wandering F0 contour in 85-255 Hz, pass
    through two formant resonators re-drawn per syllable, are gated into
    syllable bursts, and sit on a -30 dB white noise floor.
    """
    if duration <= 0:
        raise InvalidInput(f"duration must be positive, got {duration}")
    n = int(round(duration * fs))
    t = np.arange(n) / fs

    base = rng.uniform(100.0, 220.0)
    drift = np.cumsum(rng.normal(0.0, 1.0, n)) / np.sqrt(fs) * 20.0
    f0 = base * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi)))
    f0 = np.clip(f0 + drift, *F0_RANGE)
    phase = np.cumsum(f0) / fs
    glottal = 2.0 * (phase - np.floor(phase)) - 1.0

    env, spans = _syllable_envelope(rng, n, fs)
    voiced = np.zeros(n)
    for start, end in spans:
        seg = glottal[max(0, start - 256):end]
        out = np.zeros_like(seg)
        for lo, hi in ((300.0, 900.0), (900.0, 2500.0)):
            b, a = _resonator(rng.uniform(lo, hi), rng.uniform(60.0, 150.0), fs)
            out += signal.lfilter(b, a, seg)
        voiced[start:end] = out[len(out) - (end - start):]
    voiced *= env

    rms = np.sqrt(np.mean(voiced ** 2)) + 1e-12
    noise = rng.normal(0.0, 1.0, n) * rms * 10 ** (NOISE_FLOOR_DB / 20)
    x = voiced + noise
    x *= PEAK / np.max(np.abs(x))
    return Waveform(x, fs)
