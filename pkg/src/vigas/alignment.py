"""GCC-PHAT delay estimation and integer-sample shifting.

Sign convention: a positive lag means the second signal lags (arrives after)
the first.  ``shift(w, lag)`` with a positive lag delays ``w``, so
``shift(a, gcc_phat(a, b).lag)`` lines ``a`` up with ``b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .errors import InvalidInput

DEFAULT_MAX_LAG = 800
SILENCE_ENERGY = 1e-10


@dataclass(frozen=True)
class LagEstimate:
    lag: int
    peak_score: float
    degenerate: bool = False


def gcc_phat(a: Waveform, b: Waveform, max_lag: int = DEFAULT_MAX_LAG) -> LagEstimate:
    """Delay of ``b`` relative to ``a`` maximising the phase-transform cross-correlation."""
    if a.frames != b.frames or a.sample_rate != b.sample_rate:
        raise InvalidInput(
            f"gcc_phat needs equal-length clips at one rate, got {a.frames}@{a.sample_rate} "
            f"and {b.frames}@{b.sample_rate}")
    n = a.frames
    if not 0 <= max_lag < n:
        raise InvalidInput(f"max_lag {max_lag} must be in [0, {n})")
    x = a.samples.mean(axis=0)
    y = b.samples.mean(axis=0)
    if x @ x < SILENCE_ENERGY or y @ y < SILENCE_ENERGY:
        return LagEstimate(0, 0.0, degenerate=True)

    nfft = 1 << (2 * n - 1).bit_length()
    cross = np.conj(np.fft.rfft(x, nfft)) * np.fft.rfft(y, nfft)
    mag = np.abs(cross)
    cross = cross / np.maximum(mag, 1e-12 * mag.max())
    cc = np.fft.irfft(cross, nfft)
    # lags -max_lag..max_lag in increasing order
    window = np.concatenate([cc[nfft - max_lag:], cc[:max_lag + 1]])
    idx = int(np.argmax(window))
    return LagEstimate(idx - max_lag, float(window[idx]))


def shift(w: Waveform, lag: int) -> Waveform:
    """Delay ``w`` by ``lag`` samples (advance if negative), zero-filling, length kept."""
    lag = int(lag)
    if abs(lag) >= w.frames:
        raise InvalidInput(f"|lag| {abs(lag)} must be below frame count {w.frames}")
    out = np.zeros_like(w.samples)
    if lag >= 0:
        out[:, lag:] = w.samples[:, :w.frames - lag]
    else:
        out[:, :lag] = w.samples[:, -lag:]
    return Waveform(out, w.sample_rate)
