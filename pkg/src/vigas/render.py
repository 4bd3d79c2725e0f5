"""Depth + speaker-mask view images and analytic speaker bounding boxes.

Pinhole camera looking along the view's body x axis; image columns grow to the
camera's right, rows grow downward.  Square images share one field of view
horizontally and vertically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .geometry import Viewpoint
from .localization import BoundingBox

IMAGE_SIZE = 64
FOV_DEGREES = 120.0
HEAD_RADIUS = 0.25


@dataclass(frozen=True, eq=False)
class ViewImage:
    """``pixels[0]`` depth in meters, ``pixels[1]`` active-speaker mask, ``pixels[2]`` other speakers."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise InvalidInput(f"view image must be [3, H, W], got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


def camera_rays(view: Viewpoint, size: int = IMAGE_SIZE, fov_deg: float = FOV_DEGREES) -> np.ndarray:
    """Unit world-space ray directions, shape ``[size, size, 3]``."""
    half = np.tan(np.radians(fov_deg) / 2)
    c = (2 * (np.arange(size) + 0.5) / size - 1) * half
    xn, yn = np.meshgrid(c, c)  # xn along columns, yn along rows
    body = np.stack([np.ones_like(xn), -xn, -yn], axis=-1)
    body /= np.linalg.norm(body, axis=-1, keepdims=True)
    return body @ view.rotation.T


def ray_box_depth(origin: np.ndarray, dirs: np.ndarray, dims) -> np.ndarray:
    """Distance from an interior point to the box walls along each ray."""
    dims = np.asarray(dims)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(dirs > 0, (dims - origin) / dirs, np.inf)
        t_lo = np.where(dirs < 0, -origin / dirs, np.inf)
    return np.minimum(t_hi, t_lo).min(axis=-1)


def sphere_mask(origin: np.ndarray, dirs: np.ndarray, center, radius: float) -> np.ndarray:
    oc = np.asarray(center) - origin
    b = dirs @ oc
    disc = b * b - (oc @ oc - radius * radius)
    return (disc >= 0) & (b > 0)


def _extent(forward: float, lateral: float, radius: float):
    """Tangent-plane extent of a sphere's projection along one image axis."""
    q = np.hypot(forward, lateral)
    if q <= radius:
        return None
    beta = np.arctan2(lateral, forward)
    spread = np.arcsin(radius / q)
    lo, hi = beta - spread, beta + spread
    if hi <= -np.pi / 2 or lo >= np.pi / 2:
        return None
    return (np.tan(max(lo, -np.pi / 2 + 1e-9)), np.tan(min(hi, np.pi / 2 - 1e-9)))


def project_box(view: Viewpoint, center, radius: float = HEAD_RADIUS,
                fov_deg: float = FOV_DEGREES) -> BoundingBox | None:
    """Bounding box of a sphere's image, or ``None`` when it is out of view."""
    local = view.to_local(center)
    forward, right, down = local[0], -local[1], -local[2]
    if forward <= -radius:
        return None
    ex = _extent(forward, right, radius)
    ey = _extent(forward, down, radius)
    if ex is None or ey is None:
        return None
    half = np.tan(np.radians(fov_deg) / 2)
    x = [(v / half + 1) / 2 for v in ex]
    y = [(v / half + 1) / 2 for v in ey]
    if x[1] <= 0 or x[0] >= 1 or y[1] <= 0 or y[0] >= 1:
        return None
    clip = lambda v: float(min(1.0, max(0.0, v)))
    return BoundingBox(clip(y[0]), clip(y[1]), clip(x[0]), clip(x[1]))


def render_view(scene, view: Viewpoint, size: int = IMAGE_SIZE, fov_deg: float = FOV_DEGREES):
    """Ray-cast ``view`` inside ``scene``.

    Returns ``(ViewImage, boxes)`` with one ``BoundingBox`` (or ``None`` when
    out of view) per emitter.
    """
    dirs = camera_rays(view, size, fov_deg)
    depth = ray_box_depth(view.position, dirs, scene.room.dims)
    active_mask = np.zeros((size, size))
    other_mask = np.zeros((size, size))
    boxes = []
    for i, em in enumerate(scene.emitters):
        m = sphere_mask(view.position, dirs, em.position, HEAD_RADIUS)
        (active_mask if i == scene.active_emitter else other_mask)[m] = 1.0
        boxes.append(project_box(view, em.position, HEAD_RADIUS, fov_deg))
    pixels = np.stack([depth, active_mask, other_mask]).astype(np.float32)
    return ViewImage(pixels), boxes


def write_image(path, img: ViewImage):
    """Header ``H, W, C`` as int32 LE, then float32 LE pixels in H, W, C order."""
    c, h, w = img.pixels.shape
    data = np.ascontiguousarray(img.pixels.transpose(1, 2, 0), dtype="<f4")
    Path(path).write_bytes(struct.pack("<3i", h, w, c) + data.tobytes())


def read_image(path) -> ViewImage:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise InvalidInput(f"{path}: truncated image header")
    h, w, c = struct.unpack("<3i", raw[:12])
    expected = 12 + 4 * h * w * c
    if len(raw) != expected or c != 3:
        raise InvalidInput(f"{path}: expected {expected} bytes for {h}x{w}x{c}, got {len(raw)}")
    data = np.frombuffer(raw[12:], dtype="<f4").reshape(h, w, c)
    return ViewImage(data.transpose(2, 0, 1).astype(np.float32))
