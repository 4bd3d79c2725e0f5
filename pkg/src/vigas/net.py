"""The acoustic synthesis network.

Source primary audio is lifted to ``channels`` latent channels, passed through
``num_layers`` gated dilated-conv layers conditioned on a fused visual/pose
vector, and decoded from the mean of the per-layer skip outputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import Waveform, band_split
from .errors import InvalidConfig, InvalidInput, NumericalError
from .localization import BoundingBox, bbox_feature
from .render import ViewImage

CHECKPOINT_MAGIC = b"VIGASNET"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    channels: int = 64
    num_layers: int = 30
    num_blocks: int = 3
    dilation_base: int = 3
    kernel: int = 3
    fusion_hidden: int = 512
    fusion_out: int = 256
    visual_reduce_channels: int = 8
    visual_channels: tuple = (16, 32, 64)
    image_size: int = 64
    depth_scale: float = 10.0  # metres mapped to 1 so depth does not swamp the mask channels
    pose_dim: int = 9
    bbox_dim: int = 4
    use_visual: bool = True
    use_bbox: bool = True

    def __post_init__(self):
        if self.num_layers % self.num_blocks:
            raise InvalidConfig(f"num_layers {self.num_layers} not divisible by num_blocks {self.num_blocks}")
        if self.kernel % 2 == 0:
            raise InvalidConfig("kernel must be odd for centered padding")
        stride = 2 ** len(self.visual_channels)
        if self.image_size % stride:
            raise InvalidConfig(f"image_size must be divisible by {stride}")

    @property
    def layers_per_block(self) -> int:
        return self.num_layers // self.num_blocks

    def dilation(self, layer: int) -> int:
        return self.dilation_base ** (layer % self.layers_per_block)

    @property
    def visual_dim(self) -> int:
        side = self.image_size // 2 ** len(self.visual_channels)
        return self.visual_reduce_channels * side * side

    @property
    def fusion_in(self) -> int:
        return self.bbox_dim + self.pose_dim + self.visual_dim


def tiny_config(**overrides) -> NetConfig:
    """Small configuration used for gradient checks and fast tests."""
    base = dict(channels=8, num_layers=3, num_blocks=1, fusion_hidden=32, fusion_out=16,
                visual_channels=(4, 4, 4))
    base.update(overrides)
    return NetConfig(**base)


class VisualEncoder(nn.Module):
    """Strided conv backbone, 1x1 reduction to a few channels, flatten."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        chans = (3,) + tuple(cfg.visual_channels)
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1) for i in range(len(chans) - 1))
        self.reduce = nn.Conv2d(chans[-1], cfg.visual_reduce_channels, 1)
        self.depth_scale = cfg.depth_scale

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        x = torch.cat([img[:, :1] / self.depth_scale, img[:, 1:]], dim=1)
        for conv in self.convs:
            x = F.relu(conv(x))
        return self.reduce(x).flatten(1)


class Fusion(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.fc1 = nn.Linear(cfg.fusion_in, cfg.fusion_hidden)
        self.fc2 = nn.Linear(cfg.fusion_hidden, cfg.fusion_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(x)))


class GatedLayer(nn.Module):
    def __init__(self, channels: int, cond_dim: int, kernel: int, dilation: int):
        super().__init__()
        pad = dilation * (kernel - 1) // 2
        self.p_a = nn.Conv1d(channels, channels, kernel, dilation=dilation, padding=pad)
        self.q_a = nn.Conv1d(channels, channels, kernel, dilation=dilation, padding=pad)
        self.p_v = nn.Conv1d(cond_dim, channels, 1)
        self.q_v = nn.Conv1d(cond_dim, channels, 1)
        self.residual = nn.Conv1d(channels, channels, 1)
        self.skip = nn.Conv1d(channels, channels, 1)
        self.dilation = dilation
        self.pad = pad

    def forward(self, a_f: torch.Tensor, v_c: torch.Tensor):
        c = a_f.shape[1]
        # p and q share the input, so run them as one conv
        gate = F.conv1d(a_f, torch.cat([self.p_a.weight, self.q_a.weight]),
                        torch.cat([self.p_a.bias, self.q_a.bias]),
                        padding=self.pad, dilation=self.dilation)
        cond = F.conv1d(v_c.unsqueeze(-1), torch.cat([self.p_v.weight, self.q_v.weight]),
                        torch.cat([self.p_v.bias, self.q_v.bias]))
        z = torch.tanh(gate[:, :c] + cond[:, :c]) * torch.sigmoid(gate[:, c:] + cond[:, c:])
        s = torch.sin(z)
        out = F.conv1d(s, torch.cat([self.residual.weight, self.skip.weight]),
                       torch.cat([self.residual.bias, self.skip.bias]))
        return a_f + out[:, :c], out[:, c:]


class ViGASNet(nn.Module):
    """All learnable parameters plus the forward graph.

    ``flat()`` / ``load_flat()`` give the float64 flat-vector view used by the
    checkpoint format and by finite-difference checks.
    """

    def __init__(self, cfg: NetConfig = NetConfig(), seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        self.visual = VisualEncoder(cfg)
        self.fusion = Fusion(cfg)
        self.audio_encoder = nn.Conv1d(2, cfg.channels, 1)
        self.layers = nn.ModuleList(
            GatedLayer(cfg.channels, cfg.fusion_out, cfg.kernel, cfg.dilation(k))
            for k in range(cfg.num_layers))
        self.decoder = nn.Conv1d(cfg.channels, 2, 1)
        self.to(dtype)
        self.reset_parameters(seed)

    @property
    def dtype(self) -> torch.dtype:
        return self.decoder.weight.dtype

    def reset_parameters(self, seed: int = 0):
        """Fan-in scaled uniform weights, zero biases, drawn from a seeded generator."""
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                else:
                    fan_in = p[0].numel()
                    bound = np.sqrt(3.0 / fan_in)
                    p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)

    def parameter_groups(self) -> dict:
        groups = {"visual": self.visual, "fusion": self.fusion, "audio_encoder": self.audio_encoder,
                  "decoder": self.decoder}
        for k, layer in enumerate(self.layers):
            groups[f"layer{k}"] = layer
        return groups

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def flat(self) -> np.ndarray:
        return torch.nn.utils.parameters_to_vector(self.parameters()).detach().to(torch.float64).numpy()

    def load_flat(self, vec: np.ndarray):
        vec = np.array(vec, dtype=np.float64)
        if vec.shape != (self.num_parameters(),):
            raise InvalidInput(f"flat vector has {vec.size} entries, expected {self.num_parameters()}")
        with torch.no_grad():
            torch.nn.utils.vector_to_parameters(torch.from_numpy(vec).to(self.dtype), self.parameters())

    def flat_grad(self) -> np.ndarray:
        parts = [p.grad.reshape(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype)
                 for p in self.parameters()]
        return torch.cat(parts).detach().to(torch.float64).numpy()

    def visual_features(self, img: torch.Tensor) -> torch.Tensor:
        if img.shape[-2:] != (self.cfg.image_size, self.cfg.image_size):
            raise InvalidConfig(f"image {tuple(img.shape[-2:])} does not match image_size {self.cfg.image_size}")
        return self.visual(img)

    def condition(self, img: torch.Tensor, bbox: torch.Tensor, pose: torch.Tensor) -> torch.Tensor:
        """Fused conditioning vector ``[B, fusion_out]``; ablated inputs become zeros."""
        b = pose.shape[0]
        v_f = (self.visual_features(img) if self.cfg.use_visual
               else pose.new_zeros(b, self.cfg.visual_dim))
        v_l = bbox if self.cfg.use_bbox else pose.new_zeros(b, self.cfg.bbox_dim)
        return self.fusion(torch.cat([v_l, pose, v_f], dim=1))

    def forward(self, a_c: torch.Tensor, v_c: torch.Tensor) -> torch.Tensor:
        if a_c.ndim != 3 or a_c.shape[1] != 2:
            raise InvalidInput(f"expected [batch, 2, frames] audio, got {tuple(a_c.shape)}")
        h = self.audio_encoder(a_c)
        skips = 0
        for layer in self.layers:
            h, skip = layer(h, v_c)
            skips = skips + skip
        return self.decoder(skips / len(self.layers))


def _tensor(x, dtype) -> torch.Tensor:
    return torch.tensor(np.asarray(x), dtype=dtype)


def visual_encode(img: ViewImage, net: ViGASNet) -> np.ndarray:
    with torch.no_grad():
        return net.visual_features(_tensor(img.pixels, net.dtype)[None])[0].to(torch.float64).numpy()


def fuse(v_l, p_t, v_f, net: ViGASNet) -> np.ndarray:
    """Fusion MLP on ``[V_L, P_T, V_F]`` (ablation flags are the caller's business here)."""
    cfg = net.cfg
    if len(v_l) != cfg.bbox_dim or len(p_t) != cfg.pose_dim or len(v_f) != cfg.visual_dim:
        raise InvalidInput("fusion input dimensions do not match the network config")
    x = _tensor(np.concatenate([v_l, p_t, v_f]), net.dtype)[None]
    with torch.no_grad():
        return net.fusion(x)[0].to(torch.float64).numpy()


def gated_layer(a_f: np.ndarray, v_c: np.ndarray, layer: GatedLayer):
    """Single layer on ``[channels, T]`` latents; returns ``(a_next, skip)``."""
    dtype = layer.p_a.weight.dtype
    with torch.no_grad():
        a, s = layer(_tensor(a_f, dtype)[None], _tensor(v_c, dtype)[None])
    return a[0].to(torch.float64).numpy(), s[0].to(torch.float64).numpy()


def forward(a_c: Waveform, v_c: np.ndarray, net: ViGASNet) -> Waveform:
    if a_c.channels != 2:
        raise InvalidInput("synthesis input must be stereo")
    with torch.no_grad():
        out = net(_tensor(a_c.samples, net.dtype)[None], _tensor(v_c, net.dtype)[None])
    return Waveform(out[0].to(torch.float64).numpy(), a_c.sample_rate)


def conditioning(net: ViGASNet, img: ViewImage, bbox, pose) -> np.ndarray:
    v_l = bbox_feature(bbox) if isinstance(bbox, BoundingBox) else np.asarray(bbox, dtype=np.float64)
    with torch.no_grad():
        v_c = net.condition(_tensor(img.pixels, net.dtype)[None], _tensor(v_l, net.dtype)[None],
                            _tensor(pose, net.dtype)[None])
    return v_c[0].to(torch.float64).numpy()


def synthesize(a_s: Waveform, img: ViewImage, bbox, pose, net: ViGASNet, cutoff: float) -> Waveform:
    """Predict target-view audio: synthesized primary plus the source's ambient residue."""
    primary, ambient = band_split(a_s.to_stereo(), cutoff)
    return forward(primary, conditioning(net, img, bbox, pose), net) + ambient


@dataclass
class Example:
    """Network-ready training pair; audio arrays are ``[2, T]``."""

    clip_id: str
    audio: np.ndarray
    image: np.ndarray
    bbox: np.ndarray
    pose: np.ndarray
    target: np.ndarray
    lag: int = 0


def shift_tensor(x: torch.Tensor, lag: int) -> torch.Tensor:
    """Zero-filled integer delay along the last axis (negative advances)."""
    if lag == 0:
        return x
    if lag > 0:
        return F.pad(x[..., :-lag], (lag, 0))
    return F.pad(x[..., -lag:], (0, -lag))


def stack_examples(batch, dtype):
    audio = torch.as_tensor(np.stack([e.audio for e in batch]), dtype=dtype)
    image = torch.as_tensor(np.stack([e.image for e in batch]), dtype=dtype)
    bbox = torch.as_tensor(np.stack([e.bbox for e in batch]), dtype=dtype)
    pose = torch.as_tensor(np.stack([e.pose for e in batch]), dtype=dtype)
    target = torch.as_tensor(np.stack([e.target for e in batch]), dtype=dtype)
    return audio, image, bbox, pose, target


def batch_losses(net: ViGASNet, batch, loss_fn) -> torch.Tensor:
    """Per-clip losses after shifting each prediction by its alignment lag."""
    audio, image, bbox, pose, target = stack_examples(batch, net.dtype)
    pred = net(audio, net.condition(image, bbox, pose))
    pred = torch.stack([shift_tensor(pred[i], e.lag) for i, e in enumerate(batch)])
    return loss_fn(pred, target)


def gradient(net: ViGASNet, batch, loss_fn) -> tuple[float, np.ndarray]:
    """Mean batch loss and its exact gradient as a flat float64 vector."""
    net.zero_grad(set_to_none=True)
    losses = batch_losses(net, batch, loss_fn)
    bad = ~torch.isfinite(losses)
    if bad.any():
        clip = batch[int(torch.nonzero(bad)[0])].clip_id
        raise NumericalError(f"non-finite loss on clip {clip}", clip_id=clip)
    loss = losses.mean()
    loss.backward()
    return loss.item(), net.flat_grad()


def save_checkpoint(path, net: ViGASNet):
    """Magic, version, config JSON, float64 LE parameters, trailing SHA-256."""
    cfg = json.dumps(dataclasses.asdict(net.cfg), sort_keys=True).encode()
    params = net.flat().astype("<f8")
    body = (CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION) + struct.pack("<I", len(cfg))
            + cfg + struct.pack("<Q", params.size) + params.tobytes())
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path, dtype=torch.float32) -> ViGASNet:
    raw = Path(path).read_bytes()
    if len(raw) < 52 or raw[:8] != CHECKPOINT_MAGIC:
        raise InvalidInput(f"{path}: not a network checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise InvalidInput(f"{path}: checksum mismatch")
    (version,) = struct.unpack_from("<I", body, 8)
    if version != CHECKPOINT_VERSION:
        raise InvalidInput(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", body, 12)
    cfg_dict = json.loads(body[16:16 + cfg_len])
    cfg_dict["visual_channels"] = tuple(cfg_dict["visual_channels"])
    (n,) = struct.unpack_from("<Q", body, 16 + cfg_len)
    params = np.frombuffer(body, dtype="<f8", count=n, offset=24 + cfg_len)
    net = ViGASNet(NetConfig(**cfg_dict), dtype=dtype)
    net.load_flat(params)
    return net
