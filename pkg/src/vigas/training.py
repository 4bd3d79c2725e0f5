"""Training loop: magnitude loss, alignment-aware updates, checkpointing and resume."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .alignment import DEFAULT_MAX_LAG, gcc_phat
from .audio import StftConfig, Waveform, band_split
from .dataset import ClipRecord, Manifest, load_split, substream
from .errors import InvalidConfig, InvalidInput, NumericalError
from .localization import bbox_feature
from .metrics import mag_distance
from .net import (Example, NetConfig, ViGASNet, batch_losses, gradient, load_checkpoint,
                  save_checkpoint)
from .spectral import magnitude_l1

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}
LOG_FIELDS = ("epoch", "train_loss", "val_loss")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 200
    batch_size: int = 16
    window_len: int = 512
    hop: int = 128
    cutoff: float = 80.0
    seed: int = 0
    align: bool = True
    max_lag: int = DEFAULT_MAX_LAG
    enhancement_mode: bool = False
    checkpoint_every: int = 1
    dtype: str = "float32"
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.epochs <= 0 or self.batch_size <= 0 or self.checkpoint_every <= 0:
            raise InvalidConfig("epochs, batch_size and checkpoint_every must be positive")
        if self.dtype not in DTYPES:
            raise InvalidConfig(f"dtype must be one of {sorted(DTYPES)}")
        StftConfig(self.window_len, self.hop)

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.window_len, self.hop)

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]


def loss(a_l: Waveform, a_t_primary: Waveform, stft_cfg: StftConfig) -> float:
    """Mean absolute difference of STFT magnitudes; shared with the evaluation metric."""
    return mag_distance(a_l, a_t_primary, stft_cfg)


def enhancement_target(rec: ClipRecord) -> Waveform:
    """Clean near-range recording of the active emitter, duplicated to both channels."""
    if rec.clean_emitter_audio is None:
        raise InvalidInput(f"{rec.clip_id}: no clean emitter track")
    return rec.clean_emitter_audio.to_stereo()


def prepare_example(rec: ClipRecord, cfg: TrainConfig) -> Example:
    """Band-split input and target, pick the pose, and estimate the alignment lag."""
    source = rec.source_audio.to_stereo()
    if cfg.enhancement_mode:
        target, pose = enhancement_target(rec), rec.emitter_pose
    else:
        target, pose = rec.target_audio.to_stereo(), rec.pose
    primary, _ = band_split(source, cfg.cutoff)
    target_primary, _ = band_split(target, cfg.cutoff)
    lag = gcc_phat(source, target, cfg.max_lag).lag if cfg.align else 0
    return Example(rec.clip_id, primary.samples.astype(np.float32),
                   rec.source_img.pixels.astype(np.float32),
                   bbox_feature(rec.bbox).astype(np.float32), np.asarray(pose, np.float32),
                   target_primary.samples.astype(np.float32), lag)


def loss_fn(cfg: TrainConfig):
    stft_cfg = cfg.stft
    return lambda pred, target: magnitude_l1(pred, target, stft_cfg)


def make_optimizer(net: ViGASNet, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)


def train_step(net: ViGASNet, optimizer: torch.optim.Optimizer, batch, cfg: TrainConfig) -> float:
    """One gradient update on ``batch``; returns the mean batch loss before the update."""
    value, _ = gradient(net, batch, loss_fn(cfg))
    for name, p in net.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NumericalError(f"non-finite gradient in {name} for batch "
                                 f"{[e.clip_id for e in batch]}", clip_id=batch[0].clip_id)
    optimizer.step()
    return value


def evaluate_loss(net: ViGASNet, examples, cfg: TrainConfig) -> float:
    """Mean per-clip loss without updating anything."""
    if not examples:
        return math.nan
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(examples), cfg.batch_size):
            batch = examples[i:i + cfg.batch_size]
            total += float(batch_losses(net, batch, loss_fn(cfg)).sum())
    return total / len(examples)


def init_network(cfg: TrainConfig) -> ViGASNet:
    seed = int(substream(cfg.seed, "init").integers(2 ** 31))
    return ViGASNet(cfg.net, seed=seed, dtype=cfg.torch_dtype)


def epoch_order(cfg: TrainConfig, epoch: int, n: int) -> np.ndarray:
    return substream(cfg.seed, "shuffle", epoch).permutation(n)


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    history: list
    best_val_loss: float


def _write_log(path: Path, rows: list):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def read_log(path) -> list:
    with open(path, newline="") as f:
        return [{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                 "val_loss": float(r["val_loss"])} for r in csv.DictReader(f)]


def _load_state(out_dir: Path, net: ViGASNet, optimizer, cfg: TrainConfig):
    state_path, last = out_dir / "state.pt", out_dir / "last.ckpt"
    if not (state_path.exists() and last.exists()):
        return 0, [], math.inf
    restored = load_checkpoint(last, cfg.torch_dtype)
    if restored.cfg != cfg.net:
        raise InvalidConfig(f"{last}: checkpoint network config differs from the requested one")
    net.load_flat(restored.flat())
    state = torch.load(state_path, weights_only=False)
    optimizer.load_state_dict(state["optimizer"])
    log.info("resuming after epoch %d", state["epoch"])
    return state["epoch"], state["history"], state["best_val"]


def train(cfg: TrainConfig, manifest: Manifest, out_dir, examples=None) -> TrainResult:
    """Epoch loop with seeded shuffling, per-epoch validation and best/last checkpoints.

    ``examples`` may supply pre-built ``(train, val)`` example lists; otherwise they
    are built from the manifest. An existing ``last.ckpt`` plus ``state.pt`` in
    ``out_dir`` resumes the run after the last completed epoch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if examples is None:
        train_ex = [prepare_example(r, cfg) for r in load_split(manifest, "train")]
        val_ex = [prepare_example(r, cfg) for r in load_split(manifest, "val")]
    else:
        train_ex, val_ex = examples
    if not train_ex:
        raise InvalidInput("training split is empty")

    net = init_network(cfg)
    optimizer = make_optimizer(net, cfg)
    start, history, best_val = _load_state(out_dir, net, optimizer, cfg)
    best_path, last_path = out_dir / "best.ckpt", out_dir / "last.ckpt"

    for epoch in range(start + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = epoch_order(cfg, epoch, len(train_ex))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_ex[j] for j in order[i:i + cfg.batch_size]]
            total += train_step(net, optimizer, batch, cfg) * len(batch)
        train_loss = total / len(train_ex)
        val_loss = evaluate_loss(net, val_ex, cfg)
        # without a validation split the training loss picks the best checkpoint
        score = train_loss if math.isnan(val_loss) else val_loss
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if score < best_val:
            best_val = score
            save_checkpoint(best_path, net)
        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
            save_checkpoint(last_path, net)
            torch.save({"epoch": epoch, "optimizer": optimizer.state_dict(),
                        "history": history, "best_val": best_val}, out_dir / "state.pt")
            _write_log(out_dir / "train_log.csv", history)
        log.info("epoch %d train %.5f val %.5f (%.1fs)", epoch, train_loss, val_loss,
                 time.perf_counter() - t0)
    return TrainResult(best_path, last_path, history, best_val)
