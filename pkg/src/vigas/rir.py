"""Shoebox image-source room impulse responses, mono and binaural."""

from __future__ import annotations

from dataclasses import dataclass
import itertools

import numpy as np

from .audio import SAMPLE_RATE, Waveform
from .errors import InvalidInput
from .geometry import Emitter, Shoebox, Viewpoint

DEFAULT_MAX_ORDER = 6


@dataclass(frozen=True)
class ImageSources:
    """Mirror images of one source up to some reflection order.

    ``parity[k, i]`` is 1 when image ``k`` is mirrored an odd number of times
    across axis ``i``; ``wall_gain`` is the product of ``(1 - alpha)`` over every
    wall hit on the path.
    """

    positions: np.ndarray
    order: np.ndarray
    parity: np.ndarray
    wall_gain: np.ndarray


def _axis_images(max_order: int):
    # (n, p) -> image coordinate (1 - 2p) * s + 2 n L with |n - p| hits on the
    # lower wall and |n| on the upper one
    return [(n, p) for n in range(-max_order, max_order + 1) for p in (0, 1)
            if abs(2 * n - p) <= max_order]


def image_sources(room: Shoebox, src, max_order: int) -> ImageSources:
    if max_order < 0:
        raise InvalidInput(f"max_order must be >= 0, got {max_order}")
    src = np.asarray(src, dtype=np.float64)
    refl = 1.0 - room.wall_absorption
    axis = _axis_images(max_order)
    positions, orders, parities, gains = [], [], [], []
    for (nx, px), (ny, py), (nz, pz) in itertools.product(axis, axis, axis):
        order = abs(2 * nx - px) + abs(2 * ny - py) + abs(2 * nz - pz)
        if order > max_order:
            continue
        gain = 1.0
        for i, (n, p) in enumerate(((nx, px), (ny, py), (nz, pz))):
            gain *= refl[2 * i] ** abs(n - p) * refl[2 * i + 1] ** abs(n)
        if gain == 0.0:
            continue
        pos = [(1 - 2 * p) * s + 2 * n * L
               for (n, p), s, L in zip(((nx, px), (ny, py), (nz, pz)), src, room.dims)]
        positions.append(pos)
        orders.append(order)
        parities.append((px, py, pz))
        gains.append(gain)
    return ImageSources(np.array(positions), np.array(orders), np.array(parities),
                        np.array(gains))


def place_taps(delays: np.ndarray, amps: np.ndarray, length: int) -> np.ndarray:
    """Sum taps at fractional sample delays with linear interpolation."""
    h = np.zeros(length)
    i = np.floor(delays).astype(int)
    frac = delays - i
    np.add.at(h, i, amps * (1.0 - frac))
    np.add.at(h, i + 1, amps * frac)
    return h


def _check_points(room: Shoebox, src, rcv):
    if not room.contains(src):
        raise InvalidInput(f"source {src} outside room {room.dims}")
    if not room.contains(rcv):
        raise InvalidInput(f"receiver {rcv} outside room {room.dims}")
    if np.linalg.norm(np.asarray(src) - np.asarray(rcv)) < 1e-9:
        raise InvalidInput("source and receiver coincide")


def image_source_rir(room: Shoebox, src, rcv, max_order: int = DEFAULT_MAX_ORDER,
                     fs: int = SAMPLE_RATE) -> Waveform:
    """Omnidirectional RIR: taps ``wall_gain / (4 pi d)`` at delay ``d / c``."""
    src = np.asarray(src, dtype=np.float64)
    rcv = np.asarray(rcv, dtype=np.float64)
    _check_points(room, src, rcv)
    imgs = image_sources(room, src, max_order)
    d = np.linalg.norm(imgs.positions - rcv, axis=1)
    delays = d / room.speed_of_sound * fs
    length = int(np.ceil(delays.max())) + 2
    return Waveform(place_taps(delays, imgs.wall_gain / (4 * np.pi * d), length), fs)


def directivity_gain(cos_theta, index: float):
    return ((1.0 + cos_theta) / 2.0) ** index


def head_shadow_gain(cos_theta):
    """Broadband ILD weight: 1 on the ear's own side, 0.6 directly opposite."""
    return (1.0 + cos_theta) / 2.0 * 0.4 + 0.6


def binaural_rir(room: Shoebox, src: Emitter, view: Viewpoint,
                 max_order: int = DEFAULT_MAX_ORDER, fs: int = SAMPLE_RATE) -> Waveform:
    """Stereo (left, right) RIR with source directivity and head-shadow level cues."""
    left_ear, right_ear = view.ears()
    for ear in (left_ear, right_ear):
        _check_points(room, src.position, ear)
    imgs = image_sources(room, src.position, max_order)
    # mirroring flips the facing component along each odd-parity axis
    facing = src.facing_vector * (1 - 2 * imgs.parity)
    ears = ((left_ear, view.left), (right_ear, -view.left))
    delays, amps = [], []
    for ear, outward in ears:
        v = ear - imgs.positions
        d = np.linalg.norm(v, axis=1)
        u = v / d[:, None]
        g_src = directivity_gain(np.einsum("ki,ki->k", facing, u), src.directivity_index)
        g_ear = head_shadow_gain(-u @ outward)
        delays.append(d / room.speed_of_sound * fs)
        amps.append(imgs.wall_gain * g_src * g_ear / (4 * np.pi * d))
    length = int(np.ceil(max(dl.max() for dl in delays))) + 2
    h = np.stack([place_taps(dl, a, length) for dl, a in zip(delays, amps)])
    return Waveform(h, fs)


def direct_path_rir(room: Shoebox, src: Emitter, view: Viewpoint, fs: int = SAMPLE_RATE) -> Waveform:
    """Free-field binaural response (direct path only) for the same ear model."""
    return binaural_rir(room.with_absorption(1.0), src, view, max_order=0, fs=fs)
