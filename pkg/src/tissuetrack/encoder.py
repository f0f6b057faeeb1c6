"""Residual 2D feature extractor shared by the coarse and fine tracking stages.

A single slim backbone (channel widths 32-64, instance norm) consumes two
input channels per frame: image intensity and frame flow. The stride-2
features are tapped from an early stage and the stride-8 features from the
final stage, so both resolutions share weights. Inputs are reflect-padded to
multiples of 8 and the outputs cropped back, so any frame size of at least
16x16 is supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ImageSequence

STRIDES = (2, 8)


@dataclass(frozen=True)
class FeatureVolume:
    """Per-frame feature maps at a fixed stride."""

    features: torch.Tensor  # (S, d, ceil(H/k), ceil(W/k))
    stride: int
    image_size: tuple[int, int]  # (H, W) of the encoded frames

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    @property
    def frame_count(self) -> int:
        return self.features.shape[0]


class ResidualBlock2d(nn.Module):
    def __init__(self, in_channels, out_channels, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.norm1 = nn.InstanceNorm2d(out_channels, affine=True)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.norm2 = nn.InstanceNorm2d(out_channels, affine=True)
        if stride != 1 or in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.relu(self.skip(x) + y)


class FrameEncoder(nn.Module):
    """Two-channel (intensity + flow) residual encoder with two output strides."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.channels = channels
        self.stem = nn.Conv2d(2, 32, 7, stride=2, padding=3, bias=False)
        self.stem_norm = nn.InstanceNorm2d(32, affine=True)
        self.layer1 = nn.Sequential(ResidualBlock2d(32, 32), ResidualBlock2d(32, 32))
        self.fine_proj = nn.Conv2d(32, channels, 1)
        self.layer2 = nn.Sequential(ResidualBlock2d(32, 48, stride=2), ResidualBlock2d(48, 48))
        self.layer3 = nn.Sequential(ResidualBlock2d(48, 64, stride=2), ResidualBlock2d(64, 64))
        self.coarse_proj = nn.Conv2d(64, channels, 1)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)

    def forward(
        self, x: torch.Tensor, compute_fine: bool = True, compute_coarse: bool = True
    ) -> tuple[torch.Tensor | None, torch.Tensor | None]:
        """x: (S, 2, H, W) -> stride-2 and stride-8 feature stacks.

        Either tap can be skipped; both run the same trunk when requested
        together.
        """
        h, w = x.shape[-2:]
        pad_h = (-h) % 8
        pad_w = (-w) % 8
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
        x = F.relu(self.stem_norm(self.stem(x)))
        x = self.layer1(x)
        fine = None
        if compute_fine:
            fine = self.fine_proj(x)[..., : math.ceil(h / 2), : math.ceil(w / 2)]
        coarse = None
        if compute_coarse:
            x = self.layer2(x)
            x = self.layer3(x)
            coarse = self.coarse_proj(x)[..., : math.ceil(h / 8), : math.ceil(w / 8)]
        return fine, coarse

    def encode(self, seq: ImageSequence, flow: np.ndarray, stride: int) -> FeatureVolume:
        """Encode a sequence (with its frame-flow stack) at one stride."""
        if stride not in STRIDES:
            raise ValueError(f"stride must be one of {STRIDES}, got {stride}")
        flow = np.asarray(flow, dtype=np.float32)
        if flow.shape != seq.frames.shape:
            raise ValueError(
                f"flow shape {flow.shape} does not match frames {seq.frames.shape}"
            )
        device = next(self.parameters()).device
        dtype = next(self.parameters()).dtype
        x = torch.stack(
            [
                torch.from_numpy(np.array(seq.frames)),
                torch.from_numpy(flow),
            ],
            dim=1,
        ).to(device=device, dtype=dtype)
        fine, coarse = self.forward(x, compute_fine=stride == 2, compute_coarse=stride == 8)
        feats = fine if stride == 2 else coarse
        return FeatureVolume(feats, stride=stride, image_size=(seq.height, seq.width))
