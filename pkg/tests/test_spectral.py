import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from vigas.audio import StftConfig, Waveform, stft
from vigas.errors import InvalidInput
from vigas.spectral import magnitude_l1, stft_magnitude

CFG = StftConfig(64, 16)


def stft_operator(frames, cfg=CFG):
    """Complex matrix A with vec(STFT(x)) = A @ x, assembled from the numpy STFT of unit vectors."""
    cols = []
    for n in range(frames):
        e = np.zeros(frames)
        e[n] = 1.0
        cols.append(stft(Waveform(e), cfg.window_len, cfg.hop).bins[0].ravel())
    return np.stack(cols, axis=1)


class TestStftMagnitude:
    @given(st.integers(64, 300))
    @settings(max_examples=10, deadline=None)
    def test_matches_numpy_stft(self, frames):
        x = np.random.default_rng(frames).normal(size=(2, frames))
        got = stft_magnitude(torch.from_numpy(x)[None], CFG)[0].numpy()
        want = np.abs(stft(Waveform(x), CFG.window_len, CFG.hop).bins)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInput):
            magnitude_l1(torch.zeros(1, 2, 100), torch.zeros(1, 2, 101), CFG)


class TestMagnitudeL1Gradient:
    def test_closed_form(self, rng):
        frames = 160
        a = stft_operator(frames)
        p, t = rng.normal(size=frames), rng.normal(size=frames)
        x = torch.tensor(p[None, None], requires_grad=True)
        magnitude_l1(x, torch.from_numpy(t[None, None]), CFG).sum().backward()

        xp, xt = a @ p, a @ t
        d = np.abs(xp) - np.abs(xt)
        # d|X_k| / dx = Re(conj(X_k) / |X_k| * A_k)
        want = np.real((np.sign(d) * np.conj(xp) / np.abs(xp)) @ a) / len(d)
        np.testing.assert_allclose(x.grad[0, 0].numpy(), want, rtol=1e-9, atol=1e-14)

    def test_per_item_reduction(self, rng):
        p = torch.from_numpy(rng.normal(size=(3, 2, 200)))
        t = torch.from_numpy(rng.normal(size=(3, 2, 200)))
        batch = magnitude_l1(p, t, CFG)
        single = [float(magnitude_l1(p[i:i + 1], t[i:i + 1], CFG)) for i in range(3)]
        np.testing.assert_allclose(batch.numpy(), single, rtol=1e-14)
