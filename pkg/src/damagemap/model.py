"""Siamese shared-weight encoder, feature fusion, and the segmentation head.

One encoder parameter set serves both temporal branches by construction: the
pre and post images pass through the same module instance, and their feature
maps are fused (channel concatenation by default) before the head. Two
degenerate fusion modes bypass the fusion stage by altering the network
input instead: a 6-channel stack of both images, or their difference.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .types import NUM_CLASSES, ImagePair
from .types import derive_localization  # noqa: F401  (re-exported: joint-prediction rule)

FUSION_MODES = ("feature-concat", "input-concat", "input-diff", "mono-post")

# The pyramid merge always lands at 1/4 input resolution and the head
# upsamples by the same factor.
OUTPUT_STRIDE = 4


@dataclass
class ModelConfig:
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    pyramid_channels: int = 32
    fusion: str = "feature-concat"
    num_classes: int = NUM_CLASSES
    seed: int = 0

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if len(self.encoder_channels) < 2 or any(c <= 0 for c in self.encoder_channels):
            raise ValueError(
                f"encoder_channels needs >= 2 positive stage widths, got {self.encoder_channels}"
            )
        if self.pyramid_channels <= 0:
            raise ValueError(f"pyramid_channels must be positive, got {self.pyramid_channels}")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.num_classes != NUM_CLASSES:
            raise ValueError(f"num_classes must be {NUM_CLASSES}, got {self.num_classes}")

    @property
    def divisor(self) -> int:
        """Input dimensions must be divisible by this (2^stages)."""
        return 2 ** len(self.encoder_channels)

    @property
    def uses_pre_image(self) -> bool:
        return self.fusion != "mono-post"

    @property
    def fused_channels(self) -> int:
        if self.fusion == "feature-concat":
            return 2 * self.pyramid_channels
        return self.pyramid_channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


def _stage(in_ch: int, out_ch: int) -> nn.Module:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1),
        nn.LeakyReLU(0.1, inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        nn.LeakyReLU(0.1, inplace=True),
    )


def fuse(f_pre: torch.Tensor | None, f_post: torch.Tensor, strategy: str) -> torch.Tensor:
    """Combine branch features: channel stack for feature-concat, pass-through for mono-post."""
    if strategy == "feature-concat":
        if f_pre is None:
            raise ValueError("feature-concat fusion requires pre-branch features")
        if f_pre.shape != f_post.shape:
            raise ValueError(
                f"branch feature shapes differ: {tuple(f_pre.shape)} vs {tuple(f_post.shape)}"
            )
        return torch.cat([f_pre, f_post], dim=1)
    if strategy == "mono-post":
        if f_pre is not None:
            raise ValueError("mono-post fusion takes post-branch features only")
        return f_post
    raise ValueError(f"fusion stage does not apply to strategy {strategy!r}")


class DamageNet(nn.Module):
    """Staged downsampling encoder + top-down pyramid merge + segmentation head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.pyramid_channels
        in_ch = 6 if config.fusion == "input-concat" else 3

        channels = config.encoder_channels
        stages = []
        prev = in_ch
        for ch in channels:
            stages.append(_stage(prev, ch))
            prev = ch
        self.stages = nn.ModuleList(stages)
        # top-down merge uses stages at strides 4..2^n; stride-2 features are unused
        self.laterals = nn.ModuleList(nn.Conv2d(ch, c, 1) for ch in channels[1:])
        # lateral from the pooled input keeps per-cell color linearly available
        # in the merged map; deep stages alone entangle it with context
        self.input_lateral = nn.Conv2d(in_ch, c, 1)
        self.smooth = nn.Conv2d(c, c, 3, padding=1)

        # no normalization here: head activations must stay a function of the
        # fused features alone, not of tile-global statistics; leaky slope
        # keeps units recoverable without that stabilizer
        self.head = nn.Sequential(
            nn.Conv2d(config.fused_channels, c, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(c, c, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
        )
        self.classifier = nn.Conv2d(c, config.num_classes, 1)

    def encoder_modules(self) -> list[nn.Module]:
        return [self.stages, self.laterals, self.input_lateral, self.smooth]

    def encoder_parameter_count(self) -> int:
        return sum(p.numel() for m in self.encoder_modules() for p in m.parameters())

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Shared-weight branch: (N, in, H, W) -> (N, C, H/4, W/4)."""
        h, w = x.shape[-2], x.shape[-1]
        d = self.config.divisor
        if h % d != 0 or w % d != 0:
            raise ValueError(f"input dimensions must be divisible by {d}, got {h}x{w}")
        pooled = F.avg_pool2d(x, OUTPUT_STRIDE)
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        top_down = self.laterals[-1](maps[-1])
        for lateral, skip in zip(reversed(self.laterals[:-1]), reversed(maps[1:-1])):
            top_down = lateral(skip) + F.interpolate(
                top_down, scale_factor=2, mode="nearest"
            )
        return self.smooth(top_down + self.input_lateral(pooled))

    def forward(self, pre: torch.Tensor | None, post: torch.Tensor) -> torch.Tensor:
        """Route by fusion mode; returns (N, num_classes, H, W) logits."""
        mode = self.config.fusion
        if mode != "mono-post" and pre is None:
            raise ValueError(f"fusion mode {mode!r} requires the pre image")
        if pre is not None and pre.shape != post.shape:
            raise ValueError(
                f"pre shape {tuple(pre.shape)} != post shape {tuple(post.shape)}"
            )
        if mode == "feature-concat":
            fused = fuse(self.features(pre), self.features(post), mode)
        elif mode == "mono-post":
            fused = fuse(None, self.features(post), mode)
        elif mode == "input-concat":
            fused = self.features(torch.cat([pre, post], dim=1))
        else:  # input-diff
            fused = self.features(post - pre)
        out = self.head(fused)
        out = F.interpolate(
            out, scale_factor=OUTPUT_STRIDE, mode="bilinear", align_corners=False
        )
        return self.classifier(out)


def init_model(config: ModelConfig) -> DamageNet:
    """Build a model with fan-in Kaiming init drawn from a generator seeded by config.seed."""
    model = DamageNet(config)
    gen = torch.Generator().manual_seed(config.seed)
    with torch.no_grad():
        for name, module in sorted(model.named_modules()):
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                std = (2.0 / fan_in) ** 0.5
                module.weight.normal_(0.0, std, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
        # deep laterals start at zero: the merged map is initially a pure
        # function of local color, and context grows only where the loss
        # needs it (otherwise context features win the fit and memorize)
        for lateral in model.laterals:
            lateral.weight.zero_()
        if config.fusion == "input-concat":
            # pre-half and post-half of the widened stem start identical
            stem = model.stages[0][0]
            stem.weight[:, 3:] = stem.weight[:, :3]
    return model


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) float array in [0, 1] -> (1, 3, H, W) float32 tensor."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


def encode_image(model: DamageNet, image: np.ndarray) -> np.ndarray:
    """Run one image through the shared encoder; returns (h/4, w/4, C) features."""
    model.eval()
    with torch.no_grad():
        feat = model.features(image_to_tensor(image))
    return feat[0].numpy().transpose(1, 2, 0)


def forward_pair(model: DamageNet, pair: ImagePair) -> np.ndarray:
    """Inference on one scene; returns (H, W, num_classes) logits."""
    model.eval()
    pre = image_to_tensor(pair.pre) if model.config.uses_pre_image else None
    with torch.no_grad():
        logits = model(pre, image_to_tensor(pair.post))
    return logits[0].numpy().transpose(1, 2, 0)


class NonFiniteLogits(ValueError):
    """Raised when a forward pass produces NaN or infinite scores."""


def predict(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over classes; ties break toward the lower class index."""
    logits = np.asarray(logits)
    if logits.shape[-1] != NUM_CLASSES:
        raise ValueError(f"logits must have {NUM_CLASSES} channels last, got {logits.shape}")
    if not np.isfinite(logits).all():
        raise NonFiniteLogits("logits contain non-finite values")
    return np.argmax(logits, axis=-1).astype(np.uint8)


def save_checkpoint(model: DamageNet, path) -> None:
    """Single-archive checkpoint: config JSON plus all named parameter arrays."""
    arrays = {name: tensor.numpy() for name, tensor in model.state_dict().items()}
    payload = {"__config__": np.frombuffer(
        json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8"), dtype=np.uint8
    )}
    payload.update(arrays)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".npz.tmp")
    os.close(fd)
    try:
        with open(tmp, "wb") as f:
            np.savez(f, **payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path) -> DamageNet:
    """Rebuild the model from a checkpoint; forward outputs match the saved model."""
    with np.load(path) as data:
        config_json = bytes(data["__config__"]).decode("utf-8")
        config = ModelConfig.from_dict(json.loads(config_json))
        model = DamageNet(config)
        state = {
            name: torch.from_numpy(np.array(data[name]))
            for name in data.files
            if name != "__config__"
        }
    model.load_state_dict(state)
    model.eval()
    return model
