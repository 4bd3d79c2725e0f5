"""Central finite-difference check of the network gradient.

The check uses the squared difference of STFT power spectra. That loss is a
polynomial in the waveform, so the only non-smooth points left are the ReLUs of
the visual and fusion paths. Coordinates whose +/- eps perturbation flips a
ReLU activation pattern straddle a kink and are excluded (and counted).
"""

import numpy as np
import torch

from vigas.audio import StftConfig
from vigas.net import Example, batch_losses, gradient
from vigas.spectral import stft_magnitude


def power_loss(stft_cfg=StftConfig(512, 128)):
    def f(pred, target):
        d = stft_magnitude(pred, stft_cfg) ** 2 - stft_magnitude(target, stft_cfg) ** 2
        return (d ** 2).flatten(1).mean(1)
    return f


def random_batch(rng, cfg, frames, lags=(0,)):
    batch = []
    for k, lag in enumerate(lags):
        batch.append(Example(
            f"clip{k}", 0.1 * rng.normal(size=(2, frames)),
            rng.uniform(0, 1, size=(3, cfg.image_size, cfg.image_size)),
            rng.uniform(0, 1, size=4), rng.uniform(-1, 1, size=9),
            0.1 * rng.normal(size=(2, frames)), lag))
    return batch


def _relu_modules(net):
    return list(net.visual.convs) + [net.fusion.fc1]


def _loss_and_pattern(net, batch, loss_fn):
    pattern = []
    hooks = [m.register_forward_hook(lambda _m, _i, o: pattern.append(o > 0)) for m in _relu_modules(net)]
    try:
        with torch.no_grad():
            value = float(batch_losses(net, batch, loss_fn).mean())
    finally:
        for h in hooks:
            h.remove()
    return value, pattern


def check_gradient(net, batch, loss_fn, n_coords, rng, eps=1e-4):
    """Return ``(relative_errors, excluded)`` over ``n_coords`` random coordinates."""
    _, grad = gradient(net, batch, loss_fn)
    theta = net.flat()
    coords = rng.choice(theta.size, size=n_coords, replace=False)
    errors, excluded = [], 0
    try:
        for i in coords:
            step = np.zeros_like(theta)
            step[i] = eps
            net.load_flat(theta + step)
            lp, pat_p = _loss_and_pattern(net, batch, loss_fn)
            net.load_flat(theta - step)
            lm, pat_m = _loss_and_pattern(net, batch, loss_fn)
            if any(not torch.equal(a, b) for a, b in zip(pat_p, pat_m)):
                excluded += 1
                continue
            fd = (lp - lm) / (2 * eps)
            errors.append(abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-12))
    finally:
        net.load_flat(theta)
    return np.array(errors), excluded
