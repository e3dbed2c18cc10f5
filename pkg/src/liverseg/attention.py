"""Attention blocks: SE, CBAM (channel then spatial) and ASPP."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F


class AttentionVariant(str, Enum):
    NONE = "NONE"
    SE = "SE"
    CBAM = "CBAM"
    ASPP = "ASPP"
    CBAM_ASPP = "CBAM_ASPP"


@dataclass(frozen=True)
class AttentionConfig:
    variant: AttentionVariant = AttentionVariant.NONE
    reduction: int = 16
    spatial_kernel: int = 7
    aspp_rates: tuple[int, ...] = (1, 6, 12, 18)
    aspp_out_channels: int = 256

    def __post_init__(self):
        if self.spatial_kernel % 2 == 0:
            raise ValueError(f"spatial_kernel must be odd, got {self.spatial_kernel}")
        if self.reduction < 1:
            raise ValueError("reduction must be >= 1")
        if any(r < 1 for r in self.aspp_rates):
            raise ValueError(f"aspp rates must be >= 1, got {self.aspp_rates}")


def _reduced(channels: int, reduction: int) -> int:
    # clamp so tiny channel counts still get a valid bottleneck
    return max(1, channels // min(reduction, channels))


class SEBlock(nn.Module):
    """Squeeze-and-Excitation: GAP -> bottleneck MLP -> sigmoid channel gate."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = _reduced(channels, reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        s = x.mean(dim=(2, 3))
        s = torch.sigmoid(self.fc2(F.relu(self.fc1(s))))
        return x * s[:, :, None, None]


class ChannelAttention(nn.Module):
    """CBAM channel gate: shared MLP over avg- and max-pooled descriptors."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = _reduced(channels, reduction)
        self.fc1 = nn.Conv2d(channels, hidden, 1, bias=False)
        self.fc2 = nn.Conv2d(hidden, channels, 1, bias=False)

    def forward(self, x):
        avg = self.fc2(F.relu(self.fc1(F.adaptive_avg_pool2d(x, 1))))
        mx = self.fc2(F.relu(self.fc1(F.adaptive_max_pool2d(x, 1))))
        return torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    """CBAM spatial gate: conv over channel-mean and channel-max maps."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("spatial kernel must be odd")
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=False)

    def forward(self, x):
        avg = x.mean(dim=1, keepdim=True)
        mx = x.max(dim=1, keepdim=True).values
        return torch.sigmoid(self.conv(torch.cat([avg, mx], dim=1)))


class CBAM(nn.Module):
    """Channel attention then spatial attention, applied sequentially."""

    def __init__(self, channels: int, reduction: int = 16, spatial_kernel: int = 7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(spatial_kernel)

    def forward(self, x):
        x = x * self.channel(x)
        x = x * self.spatial(x)
        return x


def check_aspp_rates(rates, height: int, width: int) -> None:
    """Reject dilation rates that do not fit the feature map."""
    limit = min(height, width)
    for rate in rates:
        if rate > 1 and rate >= limit:
            raise ValueError(f"aspp rate {rate} too large for {height}x{width} feature map")


def effective_aspp_rates(rates, feature_size: int) -> tuple[int, ...]:
    """Clamp rates to the largest dilation fitting a feature_size map, deduplicated."""
    limit = max(1, feature_size - 1)
    clamped = sorted({min(r, limit) for r in rates})
    return tuple(clamped)


class ASPP(nn.Module):
    """Atrous spatial pyramid pooling.

    Parallel branches: 1x1 conv, 3x3 dilated convs for each rate > 1, and
    a global-pool branch; concatenated and fused by a 1x1 conv.
    """

    def __init__(self, in_channels: int, rates=(1, 6, 12, 18), out_channels: int = 256):
        super().__init__()
        if any(r < 1 for r in rates):
            raise ValueError(f"aspp rates must be >= 1, got {rates}")
        self.rates = tuple(rates)
        branches = []
        for rate in self.rates:
            if rate == 1:
                branches.append(nn.Sequential(
                    nn.Conv2d(in_channels, out_channels, 1, bias=False),
                    nn.BatchNorm2d(out_channels), nn.ReLU(inplace=True)))
            else:
                # replicate padding keeps spatially constant inputs constant
                branches.append(nn.Sequential(
                    nn.Conv2d(in_channels, out_channels, 3, padding=rate, dilation=rate,
                              padding_mode="replicate", bias=False),
                    nn.BatchNorm2d(out_channels), nn.ReLU(inplace=True)))
        self.branches = nn.ModuleList(branches)
        self.pool_branch = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_channels, out_channels, 1, bias=False),
            nn.BatchNorm2d(out_channels), nn.ReLU(inplace=True))
        n_branches = len(self.branches) + 1
        self.fuse = nn.Sequential(
            nn.Conv2d(n_branches * out_channels, out_channels, 1, bias=False),
            nn.BatchNorm2d(out_channels), nn.ReLU(inplace=True))

    @property
    def n_branches(self) -> int:
        return len(self.branches) + 1

    def forward(self, x):
        check_aspp_rates(self.rates, x.shape[2], x.shape[3])
        outs = [branch(x) for branch in self.branches]
        pooled = self.pool_branch(x)
        outs.append(F.interpolate(pooled, size=x.shape[2:], mode="bilinear", align_corners=False))
        return self.fuse(torch.cat(outs, dim=1))


def se_block(x: torch.Tensor, block: SEBlock) -> torch.Tensor:
    return block(x)


def cbam_channel_attention(x: torch.Tensor, gate: ChannelAttention) -> torch.Tensor:
    return gate(x)


def cbam_spatial_attention(x: torch.Tensor, gate: SpatialAttention) -> torch.Tensor:
    return gate(x)


def cbam(x: torch.Tensor, block: CBAM) -> torch.Tensor:
    return block(x)


def aspp(x: torch.Tensor, rates=(1, 6, 12, 18), out_channels: int = 256,
         module: ASPP | None = None) -> torch.Tensor:
    if module is None:
        module = ASPP(x.shape[1], rates, out_channels)
    return module(x)


def make_node_attention(config: AttentionConfig, channels: int) -> nn.Module | None:
    """Attention wrapper for a decoder fusion output, or None for no-op variants."""
    if config.variant == AttentionVariant.SE:
        return SEBlock(channels, config.reduction)
    if config.variant in (AttentionVariant.CBAM, AttentionVariant.CBAM_ASPP):
        return CBAM(channels, config.reduction, config.spatial_kernel)
    return None


def uses_aspp(config: AttentionConfig) -> bool:
    return config.variant in (AttentionVariant.ASPP, AttentionVariant.CBAM_ASPP)
