"""Waveform container and the DSP primitives the rest of the pipeline is built on.

All audio is held as float64 ``[channels, frames]`` arrays at 16 kHz.  WAV files
on disk are 16-bit PCM.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import InvalidConfig, InvalidInput

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class StftConfig:
    """Window length and hop shared by the loss, the Mag metric and the baselines."""

    window_len: int = 512
    hop: int = 128

    def __post_init__(self):
        if self.window_len <= 0 or self.window_len & (self.window_len - 1):
            raise InvalidConfig(f"window_len must be a power of two, got {self.window_len}")
        if not 0 < self.hop <= self.window_len:
            raise InvalidConfig(f"hop must be in (0, window_len], got {self.hop}")


DEFAULT_STFT = StftConfig()


@dataclass(frozen=True, eq=False)
class Waveform:
    """Immutable multi-channel audio buffer.

    ``samples`` may be given as a 1-D array (mono) or ``[channels, frames]``.
    The stored array is a read-only float64 copy.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] not in (1, 2):
            raise InvalidInput(f"expected 1 or 2 channels, got shape {np.shape(self.samples)}")
        if x.shape[1] == 0:
            raise InvalidInput("empty waveform")
        if not np.all(np.isfinite(x)):
            raise InvalidInput("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise InvalidInput(f"sample_rate must be positive, got {self.sample_rate}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.frames / self.sample_rate

    def mono(self) -> "Waveform":
        return Waveform(self.samples.mean(axis=0), self.sample_rate)

    def to_stereo(self) -> "Waveform":
        if self.channels == 2:
            return self
        return Waveform(np.repeat(self.samples, 2, axis=0), self.sample_rate)

    def segment(self, start: int, length: int) -> "Waveform":
        if start < 0 or start + length > self.frames or length <= 0:
            raise InvalidInput(f"segment [{start}, {start + length}) outside [0, {self.frames})")
        return Waveform(self.samples[:, start:start + length], self.sample_rate)

    def scaled(self, gain: float) -> "Waveform":
        return Waveform(self.samples * gain, self.sample_rate)

    def __add__(self, other: "Waveform") -> "Waveform":
        _check_compatible(self, other)
        return Waveform(self.samples + other.samples, self.sample_rate)

    def __sub__(self, other: "Waveform") -> "Waveform":
        _check_compatible(self, other)
        return Waveform(self.samples - other.samples, self.sample_rate)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex one-sided STFT, ``bins`` shaped ``[channels, freq_bins, time_frames]``.

    ``frames`` records the length of the waveform it came from so that
    :func:`istft` can restore it exactly.
    """

    bins: np.ndarray
    window_len: int
    hop: int
    sample_rate: int
    frames: int = field(default=0)

    def __post_init__(self):
        if self.bins.ndim != 3 or self.bins.shape[1] != self.window_len // 2 + 1:
            raise InvalidInput(
                f"bins shape {self.bins.shape} does not match window_len {self.window_len}")

    def scaled(self, gain) -> "Spectrogram":
        return Spectrogram(self.bins * gain, self.window_len, self.hop, self.sample_rate, self.frames)


def _check_compatible(a: Waveform, b: Waveform):
    if a.samples.shape != b.samples.shape or a.sample_rate != b.sample_rate:
        raise InvalidInput(
            f"shape/rate mismatch: {a.samples.shape}@{a.sample_rate} vs {b.samples.shape}@{b.sample_rate}")


def hann(window_len: int) -> np.ndarray:
    """Periodic Hann window (the COLA-compliant variant)."""
    return signal.get_window("hann", window_len, fftbins=True)


def num_stft_frames(frames: int, hop: int) -> int:
    return math.ceil(frames / hop)


def stft(w: Waveform, window_len: int = DEFAULT_STFT.window_len,
         hop: int = DEFAULT_STFT.hop) -> Spectrogram:
    """Centered, reflect-padded Hann STFT with ``ceil(frames / hop)`` time frames."""
    StftConfig(window_len, hop)
    if w.frames < window_len:
        raise InvalidInput(f"waveform has {w.frames} frames, fewer than window_len {window_len}")
    pad = window_len // 2
    padded = np.pad(w.samples, ((0, 0), (pad, pad)), mode="reflect")
    n = num_stft_frames(w.frames, hop)
    frames = np.lib.stride_tricks.sliding_window_view(padded, window_len, axis=-1)[:, ::hop][:, :n]
    spec = np.fft.rfft(frames * hann(window_len), axis=-1)
    return Spectrogram(np.ascontiguousarray(spec.transpose(0, 2, 1)), window_len, hop,
                       w.sample_rate, w.frames)


def istft(s: Spectrogram) -> Waveform:
    """Least-squares overlap-add inverse of :func:`stft`."""
    win = hann(s.window_len)
    if not signal.check_COLA(win, s.window_len, s.window_len - s.hop):
        raise InvalidConfig(f"Hann window {s.window_len} with hop {s.hop} is not COLA")
    channels, _, n = s.bins.shape
    frames = np.fft.irfft(s.bins.transpose(0, 2, 1), n=s.window_len, axis=-1) * win
    total = (n - 1) * s.hop + s.window_len
    out = np.zeros((channels, total))
    norm = np.zeros(total)
    for t in range(n):
        start = t * s.hop
        out[:, start:start + s.window_len] += frames[:, t]
        norm[start:start + s.window_len] += win ** 2
    pad = s.window_len // 2
    length = s.frames or (n * s.hop)
    out = out[:, pad:pad + length]
    norm = norm[pad:pad + length]
    return Waveform(out / np.maximum(norm, 1e-12), s.sample_rate)


def band_split(w: Waveform, cutoff: float) -> tuple[Waveform, Waveform]:
    """Split into (primary, ambient) with a zero-phase 4th-order Butterworth high-pass.

    ``ambient`` is the residual ``w - primary`` so the two always sum back to ``w``.
    """
    nyquist = w.sample_rate / 2
    if not 0 < cutoff < nyquist:
        raise InvalidInput(f"cutoff must lie in (0, {nyquist}), got {cutoff}")
    sos = signal.butter(4, cutoff, btype="highpass", fs=w.sample_rate, output="sos")
    primary = signal.sosfiltfilt(sos, w.samples, axis=-1)
    ambient = w.samples - primary
    return Waveform(primary, w.sample_rate), Waveform(ambient, w.sample_rate)


def energy(w: Waveform, t: int, dt: int) -> np.ndarray:
    """Per-channel sum of squared samples over ``[t, t + dt)``."""
    if t < 0 or dt <= 0 or t + dt > w.frames:
        raise InvalidInput(f"energy window [{t}, {t + dt}) outside [0, {w.frames})")
    seg = w.samples[:, t:t + dt]
    return np.einsum("ct,ct->c", seg, seg)


def fft_convolve(w: Waveform, rir: Waveform) -> Waveform:
    """Linear convolution truncated to ``w.frames``.

    A mono kernel is applied to every channel of ``w``; a stereo kernel applied
    to a mono signal yields stereo output (binaural rendering).
    """
    if w.sample_rate != rir.sample_rate:
        raise InvalidInput(f"sample rate mismatch: {w.sample_rate} vs {rir.sample_rate}")
    x, h = w.samples, rir.samples
    channels = max(x.shape[0], h.shape[0])
    x = np.broadcast_to(x, (channels, x.shape[1]))
    h = np.broadcast_to(h, (channels, h.shape[1]))
    out = signal.fftconvolve(x, h, axes=-1)[:, :w.frames]
    return Waveform(out, w.sample_rate)


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM WAV at 16 kHz with 1 or 2 channels."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate, n = f.getnchannels(), f.getsampwidth(), f.getframerate(), f.getnframes()
            raw = f.readframes(n)
    except wave.Error as e:
        raise InvalidInput(f"{path}: not a PCM WAV file ({e})") from e
    if width != 2:
        raise InvalidInput(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise InvalidInput(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    if channels not in (1, 2):
        raise InvalidInput(f"{path}: expected 1 or 2 channels, got {channels}")
    data = np.frombuffer(raw, dtype="<i2").reshape(-1, channels).T
    return Waveform(data.astype(np.float64) / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, w: Waveform):
    """Write ``w`` as 16-bit PCM; samples outside [-1, 1) are clipped."""
    if w.sample_rate != SAMPLE_RATE:
        raise InvalidInput(f"only {SAMPLE_RATE} Hz audio is written, got {w.sample_rate}")
    pcm = to_pcm16(w.samples).T
    with wave.open(str(path), "wb") as f:
        f.setnchannels(w.channels)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
