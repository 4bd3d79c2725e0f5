"""Two-speaker, four-viewpoint shoebox scenes and their random sampler."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInfeasible, InvalidConfig, InvalidInput
from .geometry import Emitter, Shoebox, Viewpoint, wrap_angle
from .render import FOV_DEGREES

MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class SceneConfig:
    room_x: tuple = (5.0, 8.0)
    room_y: tuple = (5.0, 8.0)
    room_z: tuple = (2.6, 3.2)
    absorption: tuple = (0.3, 0.7)
    emitter_height: float = 1.6
    viewpoint_height: float = 1.5
    min_separation: float = 0.5
    max_separation: float = 3.0
    viewpoint_radius: float = 2.0
    wall_margin: float = 0.5
    min_listener_distance: float = 0.75
    max_view_angle: float = 50.0
    directivity_index: float = 1.0
    num_viewpoints: int = 4

    def __post_init__(self):
        for name in ("room_x", "room_y", "room_z", "absorption"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise InvalidConfig(f"{name} range must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if self.absorption[1] > 1:
            raise InvalidConfig("absorption must not exceed 1")
        if not 0 < self.min_separation <= self.max_separation:
            raise InvalidConfig("separation range invalid")
        if self.max_view_angle >= FOV_DEGREES / 2:
            raise InvalidConfig("max_view_angle must stay inside the camera field of view")


@dataclass(frozen=True, eq=False)
class Scene:
    room: Shoebox
    emitters: tuple
    viewpoints: tuple
    active_emitter: int
    max_separation: float = field(default=3.0, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "emitters", tuple(self.emitters))
        object.__setattr__(self, "viewpoints", tuple(self.viewpoints))
        if len(self.emitters) != 2:
            raise InvalidInput("a scene holds exactly two emitters")
        if not 0 <= self.active_emitter < len(self.emitters):
            raise InvalidInput(f"active_emitter {self.active_emitter} out of range")
        for em in self.emitters:
            if not self.room.contains(em.position):
                raise InvalidInput(f"emitter at {em.position} outside room")
        for v in self.viewpoints:
            if not self.room.contains(v.position):
                raise InvalidInput(f"viewpoint at {v.position} outside room")
        if self.separation > self.max_separation + 1e-9:
            raise InvalidInput(f"emitters {self.separation:.2f} m apart exceed {self.max_separation} m")

    @property
    def separation(self) -> float:
        return float(np.linalg.norm(self.emitters[0].position - self.emitters[1].position))

    @property
    def midpoint(self) -> np.ndarray:
        return (self.emitters[0].position + self.emitters[1].position) / 2

    @property
    def active(self) -> Emitter:
        return self.emitters[self.active_emitter]


def _view_angle(view: Viewpoint, p) -> float:
    local = view.to_local(p)
    return float(np.degrees(np.arctan2(np.hypot(local[1], local[2]), local[0])))


def sample_scene(rng: np.random.Generator, config: SceneConfig = SceneConfig()) -> Scene:
    """Draw a room, two facing speakers and viewpoints aimed at their midpoint.

    Raises ``ConfigInfeasible`` once 1000 rejected draws accumulate.
    """
    attempts = 0

    def bump():
        nonlocal attempts
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise ConfigInfeasible(f"scene constraints unmet after {MAX_ATTEMPTS} attempts")

    dims = (rng.uniform(*config.room_x), rng.uniform(*config.room_y), rng.uniform(*config.room_z))
    room = Shoebox(dims, rng.uniform(*config.absorption))
    if not config.wall_margin < config.emitter_height < dims[2] - config.wall_margin:
        raise ConfigInfeasible("emitter height does not fit the sampled room")

    while True:
        bump()
        p = [np.array([rng.uniform(1.0, dims[0] - 1.0), rng.uniform(1.0, dims[1] - 1.0),
                       config.emitter_height]) for _ in range(2)]
        sep = np.linalg.norm(p[1] - p[0])
        if config.min_separation <= sep <= config.max_separation:
            break
    d = p[1] - p[0]
    yaw0 = float(np.arctan2(d[1], d[0]))
    emitters = (Emitter(p[0], yaw0, directivity_index=config.directivity_index),
                Emitter(p[1], wrap_angle(yaw0 + np.pi), directivity_index=config.directivity_index))
    mid = (p[0] + p[1]) / 2

    views = []
    while len(views) < config.num_viewpoints:
        bump()
        r = config.viewpoint_radius * np.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * np.pi)
        pos = np.array([mid[0] + r * np.cos(phi), mid[1] + r * np.sin(phi), config.viewpoint_height])
        if not room.contains(pos, config.wall_margin):
            continue
        if min(np.linalg.norm(pos - q) for q in p) < config.min_listener_distance:
            continue
        d = mid - pos
        view = Viewpoint(pos, yaw=float(np.arctan2(d[1], d[0])))
        if max(_view_angle(view, q) for q in p) > config.max_view_angle:
            continue
        views.append(view)
    active = int(rng.integers(2))
    return Scene(room, emitters, tuple(views), active, config.max_separation)


def with_signal(scene: Scene, signal) -> Scene:
    """Copy of ``scene`` whose active emitter carries ``signal``."""
    ems = list(scene.emitters)
    a = ems[scene.active_emitter]
    ems[scene.active_emitter] = Emitter(a.position, a.facing, signal, a.directivity_index)
    return Scene(scene.room, tuple(ems), scene.viewpoints, scene.active_emitter, scene.max_separation)
