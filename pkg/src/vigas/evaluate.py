"""Per-clip evaluation of synthesis methods and report emission."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import DEFAULT_STFT, StftConfig, Waveform
from .baselines import (baseline_dsp, baseline_input_copy, baseline_tf, build_tf_database, fit_dsp_gain,
                        load_hrir_dir)
from .dataset import Manifest, load_split
from .errors import EstimationFailed, InvalidInput
from .metrics import lre, mag_distance, response_rt60, rte
from .net import load_checkpoint, synthesize

log = logging.getLogger(__name__)

METHOD_ALIASES = {
    "input": "input-copy", "input-copy": "input-copy",
    "tf": "tf-estimator", "tf-estimator": "tf-estimator",
    "dsp": "dsp",
    "vigas": "vigas", "vigas-checkpoint": "vigas",
    "vigas-no-visual": "vigas-no-visual", "vigas-no-visual-checkpoint": "vigas-no-visual",
    "oracle": "oracle", "gt": "oracle",
}
CSV_FIELDS = ("method", "split", "clip_id", "mag", "lre", "rte")


def canonical_method(name: str) -> str:
    try:
        return METHOD_ALIASES[name.strip().lower()]
    except KeyError:
        raise InvalidInput(f"unknown method {name!r}; choose from {sorted(set(METHOD_ALIASES.values()))}")


@dataclass
class ClipMetrics:
    clip_id: str
    scene_id: str
    mag: float
    lre: float
    rte: float  # nan when no decay could be recovered from the prediction


@dataclass
class EvalReport:
    method: str
    split: str
    rows: list = field(default_factory=list)

    @property
    def clip_count(self) -> int:
        return len(self.rows)

    def _mean(self, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.rows if not math.isnan(getattr(r, attr))]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mag(self) -> float:
        return self._mean("mag")

    @property
    def lre(self) -> float:
        return self._mean("lre")

    @property
    def rte(self) -> float:
        return self._mean("rte")

    def per_scene(self) -> dict:
        scenes: dict = {}
        for r in self.rows:
            scenes.setdefault(r.scene_id, []).append(r)
        return {s: EvalReport(self.method, self.split, rows) for s, rows in sorted(scenes.items())}


@dataclass(frozen=True)
class EvalConfig:
    split: str = "test"
    cutoff: float = 80.0
    window_len: int = 512
    hop: int = 128
    enhancement: bool = False
    checkpoint: str = ""
    hrir_dir: str = ""

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.window_len, self.hop)


def clip_target(clip, enhancement: bool) -> Waveform:
    if enhancement:
        if clip.clean_emitter_audio is None:
            raise InvalidInput(f"{clip.clip_id}: no clean emitter track")
        return clip.clean_emitter_audio.to_stereo()
    return clip.target_audio.to_stereo()


def predicted_rt60(clip, pred: Waveform) -> float:
    """Decay time of the response recovered between the dry emitter signal and ``pred``."""
    if clip.clean_emitter_audio is None:
        return math.nan
    try:
        return response_rt60(clip.clean_emitter_audio, pred)
    except EstimationFailed:
        return math.nan


def score_clip(clip, pred: Waveform, cfg: EvalConfig) -> ClipMetrics:
    gt = clip_target(clip, cfg.enhancement)
    pred = pred.to_stereo()
    gt_rt60 = clip.gt_rt60
    pred_rt60 = predicted_rt60(clip, pred)
    err = rte(pred_rt60, gt_rt60) if gt_rt60 is not None and not cfg.enhancement else math.nan
    return ClipMetrics(clip.clip_id, clip.scene_id, mag_distance(pred, gt, cfg.stft), lre(pred, gt), err)


def make_predictor(method: str, manifest: Manifest, cfg: EvalConfig):
    """Return ``clip -> Waveform`` for ``method``; fits whatever the method needs first."""
    method = canonical_method(method)
    if method == "input-copy":
        return baseline_input_copy
    if method == "oracle":
        return lambda clip: clip_target(clip, cfg.enhancement)
    if method == "tf-estimator":
        protocol = manifest.config.get("protocol", "novel")
        db = build_tf_database(load_split(manifest, "train"), protocol, cfg.stft)
        return lambda clip: baseline_tf(clip, db, protocol, cfg.stft)
    if method == "dsp":
        hrirs = load_hrir_dir(cfg.hrir_dir) if cfg.hrir_dir else None
        gain = fit_dsp_gain(load_split(manifest, "val"), cfg.stft, hrirs)
        log.info("dsp gain %.4f", gain)
        return lambda clip: baseline_dsp(clip, gain, hrirs)
    if not cfg.checkpoint:
        raise InvalidInput(f"method {method} needs a checkpoint")
    path = Path(cfg.checkpoint)
    if not path.exists():
        raise InvalidInput(f"{path}: checkpoint not found")
    net = load_checkpoint(path)
    if method == "vigas-no-visual" and (net.cfg.use_visual or net.cfg.use_bbox):
        raise InvalidInput(f"{path}: checkpoint was not trained with the visual inputs ablated")

    def predict(clip):
        pose = clip.emitter_pose if cfg.enhancement else clip.pose
        return synthesize(clip.source_audio, clip.source_img, clip.bbox, pose, net, cfg.cutoff)
    return predict


def evaluate(method: str, manifest: Manifest, cfg: EvalConfig = EvalConfig(), clips=None) -> EvalReport:
    """Score ``method`` on every clip of ``cfg.split`` (or on ``clips`` if given)."""
    predict = make_predictor(method, manifest, cfg)
    clips = load_split(manifest, cfg.split) if clips is None else clips
    if not clips:
        raise InvalidInput(f"split {cfg.split!r} has no clips")
    report = EvalReport(canonical_method(method), cfg.split)
    for clip in clips:
        report.rows.append(score_clip(clip, predict(clip), cfg))
    return report


def _fmt(x: float) -> str:
    return "   n/a" if math.isnan(x) else f"{x:6.3f}"


def format_table(reports) -> str:
    lines = [f"{'method':<18}{'Mag':>8}{'LRE':>8}{'RTE':>8}{'clips':>7}"]
    for r in reports:
        lines.append(f"{r.method:<18}  {_fmt(r.mag)}  {_fmt(r.lre)}  {_fmt(r.rte)}{r.clip_count:>7}")
    return "\n".join(lines) + "\n"


def write_reports(reports, out_dir) -> Path:
    """``report.csv`` (per clip), ``per_scene.csv`` and the formatted ``report.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_FIELDS)
        for rep in reports:
            for row in rep.rows:
                w.writerow([rep.method, rep.split, row.clip_id, row.mag, row.lre, row.rte])
    with open(out_dir / "per_scene.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("method", "split", "scene_id", "clips", "mag", "lre", "rte"))
        for rep in reports:
            for scene, sub in rep.per_scene().items():
                w.writerow([rep.method, rep.split, scene, sub.clip_count, sub.mag, sub.lre, sub.rte])
    (out_dir / "report.txt").write_text(format_table(reports))
    return out_dir
