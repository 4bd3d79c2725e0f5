"""Multi-viewpoint dataset generation, manifest handling and clip loading.

Layout under the output directory::

    scenes/<scene_id>/view<k>.wav   received binaural audio at viewpoint k
    scenes/<scene_id>/view<k>.img   depth + speaker masks (see render.write_image)
    scenes/<scene_id>/clean.wav     dry signal of the active speaker
    scenes/<scene_id>/meta.json     geometry, boxes, RT60 ground truth
    clips.json                      clip manifest with train/val/test split
"""

from __future__ import annotations

import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import SAMPLE_RATE, Waveform, fft_convolve, read_wav, write_wav
from .errors import EstimationFailed, InvalidConfig, InvalidInput
from .geometry import Emitter, Shoebox, Viewpoint, relative_pose
from .localization import BoundingBox, NearRangeSet, dominant_speaker_filter, window_speakers
from .metrics import rt60_schroeder
from .render import ViewImage, read_image, render_view, write_image
from .rir import binaural_rir
from .scene import Scene, SceneConfig, sample_scene
from .speech import synth_speech

log = logging.getLogger(__name__)

CLIP_FRAMES = SAMPLE_RATE
SPLITS = ("train", "val", "test")


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for a named purpose (scene, speech, ambient, clips, ...)."""
    return np.random.default_rng([seed, zlib.crc32(name.encode()), *index])


@dataclass(frozen=True)
class DataConfig:
    scenes: int = 8
    clips_per_scene: int = 8
    scene_seconds: int = 4
    seed: int = 0
    # "novel": whole scenes held out; "single": held-out time segments of every scene
    protocol: str = "novel"
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    max_order: int = 6
    peak_level: float = 0.5
    ambient_level: float = 0.01
    ambient_cutoff: float = 60.0
    image_size: int = 64
    workers: int = 1
    scene: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        if self.scenes <= 0 or self.clips_per_scene <= 0:
            raise InvalidConfig("scenes and clips_per_scene must be positive")
        if self.scene_seconds < 1:
            raise InvalidConfig("scene_seconds must be at least 1")
        if self.protocol not in ("novel", "single"):
            raise InvalidConfig(f"protocol must be 'novel' or 'single', got {self.protocol!r}")
        if self.val_fraction < 0 or self.test_fraction < 0 or self.val_fraction + self.test_fraction >= 1:
            raise InvalidConfig("val_fraction + test_fraction must lie in [0, 1)")
        if self.protocol == "single" and self.scene_seconds < 3:
            raise InvalidConfig("single-environment protocol needs scene_seconds >= 3")


@dataclass(frozen=True)
class ClipEntry:
    clip_id: str
    scene: str
    source_view: int
    target_view: int
    offset: int
    split: str
    speaker: int


@dataclass
class Manifest:
    root: Path
    clips: list
    config: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        return [c for c in self.clips if c.split == name]

    def scene_ids(self, split: str | None = None) -> list:
        clips = self.clips if split is None else self.split(split)
        return sorted({c.scene for c in clips})

    @classmethod
    def load(cls, root) -> "Manifest":
        root = Path(root)
        path = root / "clips.json"
        if not path.exists():
            raise InvalidInput(f"{path}: manifest not found")
        data = json.loads(path.read_text())
        return cls(root, [ClipEntry(**c) for c in data["clips"]], data.get("config", {}))


def _split_counts(n: int, val_fraction: float, test_fraction: float) -> tuple[int, int, int]:
    n_test = int(round(n * test_fraction))
    n_val = int(round(n * val_fraction))
    if n >= 3:
        n_test = max(n_test, 1) if test_fraction > 0 else 0
        n_val = max(n_val, 1) if val_fraction > 0 else 0
    n_train = n - n_val - n_test
    if n_train < 1:
        raise InvalidConfig(f"split fractions leave no training items out of {n}")
    return n_train, n_val, n_test


def scene_splits(cfg: DataConfig) -> dict:
    """Scene index -> split for the novel-environment protocol."""
    order = substream(cfg.seed, "split").permutation(cfg.scenes)
    n_train, n_val, _ = _split_counts(cfg.scenes, cfg.val_fraction, cfg.test_fraction)
    out = {}
    for rank, idx in enumerate(order):
        out[int(idx)] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return out


def _ambient(rng, frames: int, cfg: DataConfig) -> np.ndarray:
    sos = signal.butter(4, cfg.ambient_cutoff, btype="lowpass", fs=SAMPLE_RATE, output="sos")
    x = signal.sosfilt(sos, rng.normal(size=(2, frames + 4000)), axis=-1)[:, 4000:]
    return x * cfg.ambient_level / np.sqrt(np.mean(x ** 2))


def scene_to_meta(scene: Scene) -> dict:
    return {
        "room": {"dims": list(scene.room.dims), "absorption": scene.room.wall_absorption.tolist(),
                 "speed_of_sound": scene.room.speed_of_sound},
        "emitters": [{"position": e.position.tolist(), "facing": e.facing,
                      "directivity_index": e.directivity_index} for e in scene.emitters],
        "active": scene.active_emitter,
        "viewpoints": [{"position": v.position.tolist(), "yaw": v.yaw, "pitch": v.pitch,
                        "roll": v.roll, "ear_offset": v.ear_offset} for v in scene.viewpoints],
    }


def scene_from_meta(meta: dict) -> Scene:
    room = Shoebox(tuple(meta["room"]["dims"]), tuple(meta["room"]["absorption"]),
                   meta["room"]["speed_of_sound"])
    emitters = [Emitter(e["position"], e["facing"], directivity_index=e["directivity_index"])
                for e in meta["emitters"]]
    views = [Viewpoint(v["position"], v["yaw"], v["pitch"], v["roll"], v["ear_offset"])
             for v in meta["viewpoints"]]
    return Scene(room, emitters, views, meta["active"])


def _scene_clips(cfg: DataConfig, idx: int, scene_id: str, split_of_scene: str | None,
                 tracks: NearRangeSet, boxes: list) -> tuple[list, int]:
    rng = substream(cfg.seed, "clips", idx)
    n_views = cfg.scene.num_viewpoints
    segments = list(range(cfg.scene_seconds))
    if split_of_scene is None:
        seg_train, seg_val, seg_test = _split_counts(len(segments), cfg.val_fraction, cfg.test_fraction)
        seg_split = {"train": segments[:seg_train],
                     "val": segments[seg_train:seg_train + seg_val],
                     "test": segments[seg_train + seg_val:]}
        n_train, n_val, _ = _split_counts(cfg.clips_per_scene, cfg.val_fraction, cfg.test_fraction)
        clip_splits = ["train" if i < n_train else "val" if i < n_train + n_val else "test"
                       for i in range(cfg.clips_per_scene)]
    else:
        seg_split = {split_of_scene: segments}
        clip_splits = [split_of_scene] * cfg.clips_per_scene
    used = {s: 0 for s in SPLITS}
    clips, dropped = [], 0
    for i, split in enumerate(clip_splits):
        segs = seg_split[split]
        seg = segs[used[split] % len(segs)]
        used[split] += 1
        src, tgt = (int(v) for v in rng.choice(n_views, size=2, replace=False))
        offset = seg * CLIP_FRAMES
        speakers = window_speakers(tracks, offset, CLIP_FRAMES)
        visible = [(pid, boxes[src][pid]) for pid in speakers if boxes[src][pid] is not None]
        kept = dominant_speaker_filter(visible) if len(visible) == len(speakers) else None
        if kept is None:
            dropped += 1
            continue
        clips.append(ClipEntry(f"{scene_id}_c{i:03d}", scene_id, src, tgt, offset, split, kept[0]))
    return clips, dropped


def _generate_scene(cfg: DataConfig, idx: int, out_dir: Path, split_of_scene: str | None):
    scene_id = f"s{idx:04d}"
    scene_dir = out_dir / "scenes" / scene_id
    scene_dir.mkdir(parents=True, exist_ok=True)
    scene = sample_scene(substream(cfg.seed, "scene", idx), cfg.scene)
    frames = cfg.scene_seconds * SAMPLE_RATE
    speech = synth_speech(substream(cfg.seed, "speech", idx), cfg.scene_seconds)

    rt60 = []
    received = []
    for e, em in enumerate(scene.emitters):
        row = []
        for k, view in enumerate(scene.viewpoints):
            h = binaural_rir(scene.room, em, view, cfg.max_order)
            try:
                row.append(rt60_schroeder(h))
            except EstimationFailed:
                row.append(None)
            if e == scene.active_emitter:
                received.append(fft_convolve(speech, h).samples)
        rt60.append(row)
    received = np.stack(received)
    gain = cfg.peak_level / np.max(np.abs(received))
    amb_rng = substream(cfg.seed, "ambient", idx)
    received = received * gain + np.stack([_ambient(amb_rng, frames, cfg) for _ in scene.viewpoints])

    boxes = []
    for k, view in enumerate(scene.viewpoints):
        img, view_boxes = render_view(scene, view, cfg.image_size)
        boxes.append(view_boxes)
        write_image(scene_dir / f"view{k}.img", img)
        write_wav(scene_dir / f"view{k}.wav", Waveform(received[k]))
    write_wav(scene_dir / "clean.wav", speech)

    meta = scene_to_meta(scene)
    meta.update({
        "scene_id": scene_id,
        "boxes": [[b.as_list() if b is not None else None for b in vb] for vb in boxes],
        "rt60": rt60,
        "render_gain": gain,
        "frames": frames,
    })
    (scene_dir / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))

    silent = Waveform(np.zeros(frames))
    tracks = NearRangeSet(tuple((e, speech if e == scene.active_emitter else silent)
                                for e in range(len(scene.emitters))))
    return _scene_clips(cfg, idx, scene_id, split_of_scene, tracks, boxes)


def generate_dataset(cfg: DataConfig, out_dir) -> Manifest:
    """Render every scene, write audio/images/metadata, and return the clip manifest."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"{out_dir}: cannot create dataset directory ({e})") from e
    splits = scene_splits(cfg) if cfg.protocol == "novel" else {}
    jobs = [(cfg, i, out_dir, splits.get(i)) for i in range(cfg.scenes)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_generate_scene, *zip(*jobs)))
    else:
        results = [_generate_scene(*job) for job in jobs]
    clips = [c for scene_clips, _ in results for c in scene_clips]
    dropped = sum(d for _, d in results)
    if dropped:
        log.info("dropped %d clips without a dominant visible speaker", dropped)
    config = json.loads(json.dumps(asdict(cfg)))
    data = {"config": config, "clips": [asdict(c) for c in clips]}
    (out_dir / "clips.json").write_text(json.dumps(data, indent=1, sort_keys=True))
    return Manifest(out_dir, clips, config)


@dataclass(eq=False)
class ClipRecord:
    """One training/evaluation sample."""

    clip_id: str
    scene_id: str
    split: str
    source_audio: Waveform
    target_audio: Waveform
    source_img: ViewImage
    bbox: BoundingBox
    pose: np.ndarray
    emitter_pose: np.ndarray
    gt_rt60: float | None
    clean_emitter_audio: Waveform | None
    scene: Scene
    source_view: int
    target_view: int

    def __post_init__(self):
        if self.source_audio.frames != self.target_audio.frames:
            raise InvalidInput(f"{self.clip_id}: source and target lengths differ")


@dataclass
class SceneData:
    meta: dict
    scene: Scene
    views: list
    images: list
    clean: Waveform


@lru_cache(maxsize=8)
def load_scene(scene_dir: str) -> SceneData:
    d = Path(scene_dir)
    for name in ["meta.json", "clean.wav"]:
        if not (d / name).exists():
            raise InvalidInput(f"{d / name}: missing scene file")
    meta = json.loads((d / "meta.json").read_text())
    n = len(meta["viewpoints"])
    return SceneData(meta, scene_from_meta(meta),
                     [read_wav(d / f"view{k}.wav") for k in range(n)],
                     [read_image(d / f"view{k}.img") for k in range(n)],
                     read_wav(d / "clean.wav"))


def load_clip(root, entry: ClipEntry) -> ClipRecord:
    sd = load_scene(str(Path(root) / "scenes" / entry.scene))
    src_view = sd.scene.viewpoints[entry.source_view]
    tgt_view = sd.scene.viewpoints[entry.target_view]
    box = sd.meta["boxes"][entry.source_view][entry.speaker]
    if box is None:
        raise InvalidInput(f"{entry.clip_id}: speaker {entry.speaker} not visible in source view")
    active = sd.scene.emitters[sd.meta["active"]]
    rt = sd.meta["rt60"][sd.meta["active"]][entry.target_view]
    return ClipRecord(
        clip_id=entry.clip_id, scene_id=entry.scene, split=entry.split,
        source_audio=sd.views[entry.source_view].segment(entry.offset, CLIP_FRAMES),
        target_audio=sd.views[entry.target_view].segment(entry.offset, CLIP_FRAMES),
        source_img=sd.images[entry.source_view],
        bbox=BoundingBox(*box),
        pose=relative_pose(src_view, tgt_view),
        emitter_pose=relative_pose(src_view, active.as_viewpoint()),
        gt_rt60=rt,
        clean_emitter_audio=sd.clean.segment(entry.offset, CLIP_FRAMES),
        scene=sd.scene, source_view=entry.source_view, target_view=entry.target_view,
    )


def load_split(manifest: Manifest, split: str) -> list:
    return [load_clip(manifest.root, c) for c in manifest.split(split)]
