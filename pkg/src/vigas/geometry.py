"""Room, emitter and viewpoint types plus pose arithmetic.

Body frame convention: x forward, y left, z up.  Orientation is
``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform
from .errors import InvalidInput

SPEED_OF_SOUND = 343.0
EAR_OFFSET = 0.09


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    a.flags.writeable = False
    return a


def rotation(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def wrap_angle(a: float) -> float:
    return float((a + np.pi) % (2 * np.pi) - np.pi)


@dataclass(frozen=True, eq=False)
class Shoebox:
    """Axis-aligned room ``[0, Lx] x [0, Ly] x [0, Lz]``.

    ``absorption`` is either one coefficient for every surface or six, ordered
    ``(x=0, x=Lx, y=0, y=Ly, z=0, z=Lz)``.
    """

    dims: tuple
    absorption: object = 0.5
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise InvalidInput(f"room dims must be three positive lengths, got {self.dims}")
        alpha = np.broadcast_to(np.asarray(self.absorption, dtype=np.float64), (6,)).copy()
        if np.any(alpha <= 0) or np.any(alpha > 1):
            raise InvalidInput(f"absorption must lie in (0, 1], got {self.absorption}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "wall_absorption", alpha)

    def contains(self, p, margin: float = 0.0) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p > margin) and np.all(p < np.asarray(self.dims) - margin))

    def with_absorption(self, absorption) -> "Shoebox":
        return Shoebox(self.dims, absorption, self.speed_of_sound)


@dataclass(frozen=True, eq=False)
class Emitter:
    position: np.ndarray
    facing: float = 0.0
    signal: Waveform | None = None
    directivity_index: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        if self.directivity_index < 0:
            raise InvalidInput("directivity_index must be non-negative")

    @property
    def facing_vector(self) -> np.ndarray:
        return np.array([np.cos(self.facing), np.sin(self.facing), 0.0])

    def as_viewpoint(self) -> "Viewpoint":
        """Pseudo-viewpoint at the emitter's head, looking where it faces."""
        return Viewpoint(self.position, yaw=self.facing)


@dataclass(frozen=True, eq=False)
class Viewpoint:
    position: np.ndarray
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    ear_offset: float = EAR_OFFSET
    _rot: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "_rot", rotation(self.yaw, self.pitch, self.roll))

    @property
    def rotation(self) -> np.ndarray:
        return self._rot

    @property
    def forward(self) -> np.ndarray:
        return self._rot[:, 0]

    @property
    def left(self) -> np.ndarray:
        return self._rot[:, 1]

    @property
    def up(self) -> np.ndarray:
        return self._rot[:, 2]

    def ears(self) -> tuple[np.ndarray, np.ndarray]:
        """World positions of the (left, right) ears."""
        return self.position + self.ear_offset * self.left, self.position - self.ear_offset * self.left

    def to_local(self, p) -> np.ndarray:
        return self._rot.T @ (np.asarray(p, dtype=np.float64) - self.position)


def relative_pose(src: Viewpoint, tgt: Viewpoint) -> np.ndarray:
    """Target pose seen from the source view as a 9-vector.

    ``(dx, dy, dz)`` in the source body frame, then ``(sin, cos)`` of the roll,
    pitch and yaw differences.
    """
    t = src.to_local(tgt.position)
    out = list(t)
    for d in (tgt.roll - src.roll, tgt.pitch - src.pitch, tgt.yaw - src.yaw):
        out += [np.sin(d), np.cos(d)]
    return np.array(out)


def angle_features(v: Viewpoint) -> np.ndarray:
    """Absolute pose as position plus sin/cos of roll, pitch, yaw (used as lookup keys)."""
    out = list(v.position)
    for a in (v.roll, v.pitch, v.yaw):
        out += [np.sin(a), np.cos(a)]
    return np.array(out)
