"""Evaluation metrics: magnitude spectrogram distance, left-right energy ratio error, RT60 error."""

from __future__ import annotations

import numpy as np
import torch
from scipy import signal

from .audio import DEFAULT_STFT, StftConfig, Waveform
from .errors import EstimationFailed, InvalidInput
from .spectral import magnitude_l1

ENERGY_FLOOR = 1e-12
FIT_RANGE_DB = (-5.0, -25.0)
# the low-frequency ambient bed leaks into the response tail and inflates the decay time
RESPONSE_MIN_FREQ = 200.0


def mag_distance(pred: Waveform, gt: Waveform, stft_cfg: StftConfig = DEFAULT_STFT) -> float:
    """Mean absolute STFT-magnitude difference; the training loss evaluated in float64."""
    if pred.samples.shape != gt.samples.shape:
        raise InvalidInput(f"shape mismatch {pred.samples.shape} vs {gt.samples.shape}")
    p = torch.tensor(pred.samples)[None]
    g = torch.tensor(gt.samples)[None]
    return float(magnitude_l1(p, g, stft_cfg)[0])


def lr_ratio_db(w: Waveform) -> float:
    if w.channels != 2:
        raise InvalidInput("left-right energy ratio needs stereo audio")
    e = np.maximum(np.einsum("ct,ct->c", w.samples, w.samples), ENERGY_FLOOR)
    return float(10 * np.log10(e[0] / e[1]))


def lre(pred: Waveform, gt: Waveform) -> float:
    """Absolute difference of left/right energy ratios, in dB."""
    return abs(lr_ratio_db(pred) - lr_ratio_db(gt))


def schroeder_curve(rir: Waveform) -> np.ndarray:
    """Normalized backward-integrated energy decay in dB (channels pooled)."""
    e = (rir.samples ** 2).sum(axis=0)
    edc = np.cumsum(e[::-1])[::-1]
    if edc[0] <= 0:
        raise EstimationFailed("impulse response carries no energy")
    with np.errstate(divide="ignore"):
        return 10 * np.log10(edc / edc[0])


def rt60_schroeder(rir: Waveform, fit_range=FIT_RANGE_DB) -> float:
    """RT60 from a least-squares line through the -5 to -25 dB part of the decay curve."""
    edc = schroeder_curve(rir)
    hi, lo = fit_range
    start = int(np.argmax(edc <= hi))
    if not np.any(edc <= lo) or edc[start] > hi:
        raise EstimationFailed(f"decay curve never reaches {lo} dB")
    stop = int(np.argmax(edc <= lo))
    if stop - start < 4:
        raise EstimationFailed("too few samples in the fit range")
    t = np.arange(start, stop + 1) / rir.sample_rate
    slope = np.polyfit(t, edc[start:stop + 1], 1)[0]
    if slope >= 0:
        raise EstimationFailed("decay curve is not decaying")
    return float(-60.0 / slope)


def rte(pred_rt60: float, gt_rt60: float) -> float:
    return abs(float(pred_rt60) - float(gt_rt60))


def estimate_response(dry: Waveform, wet: Waveform, length: int = 4096,
                      min_freq: float = RESPONSE_MIN_FREQ) -> Waveform:
    """Per-channel impulse response from ``dry`` (mono) to ``wet`` by Welch H1 averaging.

    Bins below ``min_freq`` are zeroed before the inverse transform.
    """
    if dry.frames != wet.frames:
        raise InvalidInput("dry and wet clips must have equal length")
    x = dry.samples.mean(axis=0)
    if x @ x < ENERGY_FLOOR:
        raise EstimationFailed("dry reference is silent")
    kw = dict(fs=wet.sample_rate, nperseg=length, noverlap=length * 3 // 4, window="hann")
    freqs, pxx = signal.welch(x, **kw)
    hs = []
    for y in wet.samples:
        _, pxy = signal.csd(x, y, **kw)
        h = pxy / (pxx + 1e-3 * pxx.mean())
        h[freqs < min_freq] = 0
        hs.append(np.fft.irfft(h, n=length))
    return Waveform(np.stack(hs), wet.sample_rate)


def response_rt60(dry: Waveform, wet: Waveform, length: int = 4096) -> float:
    """RT60 of the response recovered between a dry signal and a rendered clip."""
    h = estimate_response(dry, wet, length)
    # discard the wrapped-around acausal half
    return rt60_schroeder(Waveform(h.samples[:, :length // 2], h.sample_rate))
