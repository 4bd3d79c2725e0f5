"""Active speaker selection from close-talk tracks and dominant-speaker clip filtering."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .audio import SAMPLE_RATE, Waveform, energy
from .errors import InvalidInput

WINDOW_SECONDS = 0.2
WINDOW_FRAMES = int(WINDOW_SECONDS * SAMPLE_RATE)
DOMINANCE_PCT = 80.0


@dataclass(frozen=True)
class BoundingBox:
    """Normalized image box; y grows downward, x grows rightward."""

    y_min: float
    y_max: float
    x_min: float
    x_max: float

    def __post_init__(self):
        if not (0.0 <= self.y_min <= self.y_max <= 1.0 and 0.0 <= self.x_min <= self.x_max <= 1.0):
            raise InvalidInput(f"invalid bounding box {self}")

    @classmethod
    def full_frame(cls) -> "BoundingBox":
        return cls(0.0, 1.0, 0.0, 1.0)

    def as_list(self) -> list[float]:
        return [self.y_min, self.y_max, self.x_min, self.x_max]


@dataclass(frozen=True)
class NearRangeSet:
    """One clean mono close-talk recording per participant."""

    tracks: tuple[tuple[int, Waveform], ...]

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        if self.tracks:
            frames = {w.frames for _, w in self.tracks}
            rates = {w.sample_rate for _, w in self.tracks}
            if len(frames) > 1 or len(rates) > 1:
                raise InvalidInput("near-range tracks must share length and sample rate")

    @property
    def frames(self) -> int:
        return self.tracks[0][1].frames


def active_speaker(tracks: NearRangeSet, t: int, dt: int = WINDOW_FRAMES) -> int:
    """Person id whose track carries the most energy in ``[t, t + dt)``.

    Ties go to the lowest person id.
    """
    if not tracks.tracks:
        raise InvalidInput("no near-range tracks")
    best_id, best_e = None, -np.inf
    for pid, w in sorted(tracks.tracks, key=lambda item: item[0]):
        e = float(energy(w, t, dt).sum())
        if e > best_e:
            best_id, best_e = pid, e
    return best_id


def window_speakers(tracks: NearRangeSet, start: int, length: int,
                    dt: int = WINDOW_FRAMES) -> list[int]:
    """Active speaker for each consecutive ``dt`` window of a clip (5 for 1 s clips)."""
    return [active_speaker(tracks, start + k * dt, dt) for k in range(length // dt)]


def dominant_speaker_filter(clip_boxes: Sequence[tuple[int, BoundingBox]],
                            delta_pct: float = DOMINANCE_PCT):
    """Keep a clip when strictly more than ``delta_pct`` percent of its windows agree.

    Returns ``(person_id, box)`` using the box from the middle window, or ``None``
    when the clip has no dominant speaker.
    """
    if not clip_boxes:
        return None
    counts = Counter(pid for pid, _ in clip_boxes)
    pid, count = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if 100.0 * count / len(clip_boxes) <= delta_pct:
        return None
    mid = len(clip_boxes) // 2
    # the middle window may name someone else; fall back to the closest window of the winner
    order = sorted(range(len(clip_boxes)), key=lambda i: (abs(i - mid), i))
    idx = next(i for i in order if clip_boxes[i][0] == pid)
    return pid, clip_boxes[idx][1]


def bbox_feature(b: BoundingBox) -> np.ndarray:
    """Localization feature: ``(y_min, y_max, x_min, x_max)``."""
    return np.array(b.as_list(), dtype=np.float64)
