"""Encoder backbones producing a 5-level feature pyramid.

Every encoder emits features F1..F5 at spatial scales 1/2 .. 1/32 of the
input. ResNet18/34/50 reuse the torchvision bodies (fc/avgpool dropped);
RESNET_TINY is a narrow BasicBlock stack for fast CPU testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models import resnet18, resnet34, resnet50


@dataclass
class FeaturePyramid:
    """Ordered features F1..F5 with halving spatial scales."""

    levels: list[torch.Tensor]

    def __post_init__(self):
        if len(self.levels) != 5:
            raise ValueError(f"expected 5 pyramid levels, got {len(self.levels)}")
        for prev, cur in zip(self.levels, self.levels[1:]):
            if (prev.shape[2] != cur.shape[2] * 2) or (prev.shape[3] != cur.shape[3] * 2):
                raise ValueError(
                    f"pyramid levels must halve: {tuple(prev.shape)} -> {tuple(cur.shape)}")

    @property
    def channels(self) -> list[int]:
        return [int(f.shape[1]) for f in self.levels]


def _conv_bn_relu(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class DoubleConv(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__(_conv_bn_relu(in_ch, out_ch, stride), _conv_bn_relu(out_ch, out_ch))


class PlainCNNEncoder(nn.Module):
    """Five stride-2 double-conv stages."""

    def __init__(self, in_channels: int = 1, widths=(16, 32, 64, 128, 256)):
        super().__init__()
        if len(widths) != 5:
            raise ValueError("need 5 stage widths")
        stages = []
        prev = in_channels
        for w in widths:
            stages.append(DoubleConv(prev, w, stride=2))
            prev = w
        self.stages = nn.ModuleList(stages)
        self.out_channels = list(widths)

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch))
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class TinyResNetEncoder(nn.Module):
    """Narrow ResNet (widths 8/16/32/64/128, two blocks per stage)."""

    WIDTHS = (8, 16, 32, 64, 128)

    def __init__(self, in_channels: int = 1):
        super().__init__()
        w = self.WIDTHS
        self.conv1 = nn.Conv2d(in_channels, w[0], 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(w[0])
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        self.layer1 = nn.Sequential(BasicBlock(w[0], w[1]), BasicBlock(w[1], w[1]))
        self.layer2 = nn.Sequential(BasicBlock(w[1], w[2], 2), BasicBlock(w[2], w[2]))
        self.layer3 = nn.Sequential(BasicBlock(w[2], w[3], 2), BasicBlock(w[3], w[3]))
        self.layer4 = nn.Sequential(BasicBlock(w[3], w[4], 2), BasicBlock(w[4], w[4]))
        self.out_channels = list(w)

    def forward(self, x) -> list[torch.Tensor]:
        f1 = F.relu(self.bn1(self.conv1(x)))
        f2 = self.layer1(self.maxpool(f1))
        f3 = self.layer2(f2)
        f4 = self.layer3(f3)
        f5 = self.layer4(f4)
        return [f1, f2, f3, f4, f5]


_RESNETS = {
    "RESNET18": (resnet18, (64, 64, 128, 256, 512)),
    "RESNET34": (resnet34, (64, 64, 128, 256, 512)),
    "RESNET50": (resnet50, (64, 256, 512, 1024, 2048)),
}


class ResNetEncoder(nn.Module):
    """Torchvision ResNet body as a pyramid encoder.

    With rgb_stem=True the original 3-channel stem is kept (for loading
    RGB-pretrained weights) and grayscale input is replicated to 3
    channels; otherwise the stem is rebuilt for 1 channel.
    """

    def __init__(self, depth: str, in_channels: int = 1, rgb_stem: bool = False):
        super().__init__()
        ctor, widths = _RESNETS[depth]
        net = ctor(weights=None)
        self.rgb_stem = rgb_stem
        if not rgb_stem:
            net.conv1 = nn.Conv2d(in_channels, 64, 7, stride=2, padding=3, bias=False)
        self.conv1 = net.conv1
        self.bn1 = net.bn1
        self.relu = net.relu
        self.maxpool = net.maxpool
        self.layer1 = net.layer1
        self.layer2 = net.layer2
        self.layer3 = net.layer3
        self.layer4 = net.layer4
        self.out_channels = list(widths)

    def forward(self, x) -> list[torch.Tensor]:
        if self.rgb_stem and x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        f1 = self.relu(self.bn1(self.conv1(x)))
        f2 = self.layer1(self.maxpool(f1))
        f3 = self.layer2(f2)
        f4 = self.layer3(f3)
        f5 = self.layer4(f4)
        return [f1, f2, f3, f4, f5]
