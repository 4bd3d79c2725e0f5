"""Differentiable STFT magnitudes and the magnitude L1 distance.

The framing matches :func:`vigas.audio.stft` exactly (periodic Hann, centered
reflect padding, ``ceil(frames / hop)`` frames) so that training loss and the
evaluation metric are one computation.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .audio import DEFAULT_STFT, StftConfig
from .errors import InvalidInput


def stft_magnitude(x: torch.Tensor, cfg: StftConfig = DEFAULT_STFT) -> torch.Tensor:
    """``[B, C, T]`` real audio -> ``[B, C, freq_bins, frames]`` magnitudes."""
    b, c, t = x.shape
    pad = cfg.window_len // 2
    padded = F.pad(x.reshape(b * c, 1, t), (pad, pad), mode="reflect").reshape(b, c, -1)
    n = math.ceil(t / cfg.hop)
    frames = padded.unfold(-1, cfg.window_len, cfg.hop)[:, :, :n]
    window = torch.hann_window(cfg.window_len, periodic=True, dtype=x.dtype, device=x.device)
    spec = torch.fft.rfft(frames * window, dim=-1)
    return spec.abs().transpose(-1, -2)


def magnitude_l1(pred: torch.Tensor, target: torch.Tensor,
                 cfg: StftConfig = DEFAULT_STFT) -> torch.Tensor:
    """Per-item mean ``| |STFT(pred)| - |STFT(target)| |`` over channels, bins, frames."""
    if pred.shape != target.shape:
        raise InvalidInput(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = stft_magnitude(pred, cfg) - stft_magnitude(target, cfg)
    return diff.abs().flatten(1).mean(dim=1)
