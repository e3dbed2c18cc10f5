"""Segmentation models: UNet baseline and UNet3+ with full-scale skips.

Both architectures share the encoder pyramid contract and emit
per-pixel class logits at the input resolution. Checkpoint names follow
`encoder.*` / `decoder.nodeI.sourceJ.*` (UNet3+) or `decoder.upK.*`
(UNet) / `head.*`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import (ASPP, AttentionConfig, AttentionVariant,
                        effective_aspp_rates, make_node_attention, uses_aspp)
from .backbones import (DoubleConv, FeaturePyramid, PlainCNNEncoder,
                        ResNetEncoder, TinyResNetEncoder)


class Architecture(str, Enum):
    UNET = "UNET"
    UNET3P = "UNET3P"


class Backbone(str, Enum):
    PLAIN_CNN = "PLAIN_CNN"
    RESNET18 = "RESNET18"
    RESNET34 = "RESNET34"
    RESNET50 = "RESNET50"
    RESNET_TINY = "RESNET_TINY"


class UnsupportedConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    architecture: Architecture = Architecture.UNET3P
    backbone: Backbone = Backbone.RESNET50
    decoder_channels: int = 64
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    num_classes: int = 2
    input_size: int = 256
    pretrained: bool = False

    def __post_init__(self):
        if self.input_size % 32 != 0 or self.input_size <= 0:
            raise UnsupportedConfigError(
                f"input_size must be a positive multiple of 32, got {self.input_size}")
        if self.num_classes < 2:
            raise UnsupportedConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.decoder_channels <= 0:
            raise UnsupportedConfigError("decoder_channels must be positive")

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture.value,
            "backbone": self.backbone.value,
            "decoder_channels": self.decoder_channels,
            "attention": self.attention.variant.value,
            "attention_reduction": self.attention.reduction,
            "attention_spatial_kernel": self.attention.spatial_kernel,
            "aspp_rates": list(self.attention.aspp_rates),
            "aspp_out_channels": self.attention.aspp_out_channels,
            "num_classes": self.num_classes,
            "input_size": self.input_size,
            "pretrained": self.pretrained,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        attn = AttentionConfig(
            variant=AttentionVariant(str(d.get("attention", "NONE")).upper()),
            reduction=int(d.get("attention_reduction", 16)),
            spatial_kernel=int(d.get("attention_spatial_kernel", 7)),
            aspp_rates=tuple(d.get("aspp_rates", (1, 6, 12, 18))),
            aspp_out_channels=int(d.get("aspp_out_channels", 256)),
        )
        return cls(
            architecture=Architecture(str(d.get("architecture", "UNET3P")).upper()),
            backbone=Backbone(str(d.get("backbone", "RESNET50")).upper()),
            decoder_channels=int(d.get("decoder_channels", 64)),
            attention=attn,
            num_classes=int(d.get("num_classes", 2)),
            input_size=int(d.get("input_size", 256)),
            pretrained=bool(d.get("pretrained", False)),
        )


def _build_encoder(config: ModelConfig) -> nn.Module:
    if config.backbone == Backbone.PLAIN_CNN:
        return PlainCNNEncoder(in_channels=1)
    if config.backbone == Backbone.RESNET_TINY:
        return TinyResNetEncoder(in_channels=1)
    if config.backbone in (Backbone.RESNET18, Backbone.RESNET34, Backbone.RESNET50):
        return ResNetEncoder(config.backbone.value, in_channels=1, rgb_stem=config.pretrained)
    raise UnsupportedConfigError(f"unsupported backbone {config.backbone}")


class UNet3PlusNode(nn.Module):
    """One full-scale decoder node: 5 rescaled sources fused to C channels."""

    def __init__(self, level: int, source_channels: list[int], out_channels: int):
        super().__init__()
        self.level = level
        for j, in_ch in enumerate(source_channels, start=1):
            setattr(self, f"source{j}", nn.Sequential(
                nn.Conv2d(in_ch, out_channels, 3, padding=1, bias=False),
                nn.BatchNorm2d(out_channels), nn.ReLU(inplace=True)))
        self.fuse = nn.Sequential(
            nn.Conv2d(len(source_channels) * out_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels), nn.ReLU(inplace=True))
        self.attn: nn.Module | None = None

    def forward(self, sources: list[torch.Tensor]) -> torch.Tensor:
        mapped = [getattr(self, f"source{j}")(s) for j, s in enumerate(sources, start=1)]
        out = self.fuse(torch.cat(mapped, dim=1))
        if self.attn is not None:
            out = self.attn(out)
        return out


class UNet3PlusDecoder(nn.Module):
    """Full-scale skip decoder: nodes D4..D1, each aggregating all 5 scales."""

    def __init__(self, encoder_channels: list[int], decoder_channels: int,
                 bottleneck_channels: int | None = None):
        super().__init__()
        self.decoder_channels = decoder_channels
        bottleneck_channels = bottleneck_channels or encoder_channels[4]
        for i in range(4, 0, -1):
            source_channels = []
            for k in range(1, 6):
                if k <= i:
                    source_channels.append(encoder_channels[k - 1])
                elif k == 5:
                    source_channels.append(bottleneck_channels)
                else:
                    source_channels.append(decoder_channels)
            setattr(self, f"node{i}", UNet3PlusNode(i, source_channels, decoder_channels))

    @property
    def nodes(self) -> list[UNet3PlusNode]:
        return [getattr(self, f"node{i}") for i in (4, 3, 2, 1)]

    def forward(self, pyramid: FeaturePyramid, bottleneck: torch.Tensor) -> torch.Tensor:
        feats = pyramid.levels
        decoded: dict[int, torch.Tensor] = {}
        for i in range(4, 0, -1):
            target = feats[i - 1].shape[2:]
            sources = []
            for k in range(1, 6):
                if k <= i:
                    src = feats[k - 1]
                    if k < i:
                        src = F.max_pool2d(src, kernel_size=2 ** (i - k))
                elif k == 5:
                    src = F.interpolate(bottleneck, size=target, mode="bilinear",
                                        align_corners=False)
                else:
                    src = F.interpolate(decoded[k], size=target, mode="bilinear",
                                        align_corners=False)
                sources.append(src)
            decoded[i] = getattr(self, f"node{i}")(sources)
        return decoded[1]


class UNetUpStage(nn.Module):
    """One classic UNet decoder step: upsample, concat skip, double conv."""

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_channels, out_channels, 2, stride=2)
        self.conv = DoubleConv(out_channels + skip_channels, out_channels)
        self.attn: nn.Module | None = None

    def forward(self, x, skip):
        x = self.up(x)
        x = self.conv(torch.cat([x, skip], dim=1))
        if self.attn is not None:
            x = self.attn(x)
        return x


class UNetDecoder(nn.Module):
    """Single-scale skip decoder over the pyramid (classic 4-up path)."""

    def __init__(self, encoder_channels: list[int], bottleneck_channels: int | None = None):
        super().__init__()
        bottleneck_channels = bottleneck_channels or encoder_channels[4]
        prev = bottleneck_channels
        # up4 consumes F4 .. up1 consumes F1
        for i in range(4, 0, -1):
            skip = encoder_channels[i - 1]
            setattr(self, f"up{i}", UNetUpStage(prev, skip, skip))
            prev = skip
        self.decoder_channels = encoder_channels[0]

    @property
    def nodes(self) -> list[UNetUpStage]:
        return [getattr(self, f"up{i}") for i in (4, 3, 2, 1)]

    def forward(self, pyramid: FeaturePyramid, bottleneck: torch.Tensor) -> torch.Tensor:
        feats = pyramid.levels
        x = bottleneck
        for i in range(4, 0, -1):
            x = getattr(self, f"up{i}")(x, feats[i - 1])
        return x


class SegModel(nn.Module):
    """Encoder + optional bottleneck attention + decoder + 1x1 head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = _build_encoder(config)
        enc_channels = self.encoder.out_channels
        bottleneck_channels = enc_channels[4]
        if uses_aspp(config.attention):
            f5_size = config.input_size // 32
            rates = effective_aspp_rates(config.attention.aspp_rates, f5_size)
            self.bottleneck: nn.Module = ASPP(enc_channels[4], rates,
                                              config.attention.aspp_out_channels)
            bottleneck_channels = config.attention.aspp_out_channels
        else:
            self.bottleneck = nn.Identity()
        if config.architecture == Architecture.UNET3P:
            self.decoder: nn.Module = UNet3PlusDecoder(
                enc_channels, config.decoder_channels, bottleneck_channels)
        elif config.architecture == Architecture.UNET:
            self.decoder = UNetDecoder(enc_channels, bottleneck_channels)
        else:
            raise UnsupportedConfigError(f"unsupported architecture {config.architecture}")
        attach_attention(self.decoder, config.attention)
        self.head = nn.Conv2d(self.decoder.decoder_channels, config.num_classes, 1)
        self.apply(_init_he_normal)

    def encode(self, batch: torch.Tensor) -> FeaturePyramid:
        if batch.ndim != 4:
            raise ValueError(f"expected B×C×H×W input, got shape {tuple(batch.shape)}")
        expected = self.config.input_size
        if batch.shape[2] != expected or batch.shape[3] != expected:
            raise ValueError(
                f"expected {expected}x{expected} input, got {batch.shape[2]}x{batch.shape[3]}")
        return FeaturePyramid(levels=self.encoder(batch))

    def decode(self, pyramid: FeaturePyramid) -> torch.Tensor:
        bottleneck = self.bottleneck(pyramid.levels[4])
        d1 = self.decoder(pyramid, bottleneck)
        logits = self.head(d1)
        return F.interpolate(logits, scale_factor=2, mode="bilinear", align_corners=False)

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(batch))


def attach_attention(decoder: nn.Module, config: AttentionConfig) -> nn.Module:
    """Install SE/CBAM wrappers on each decoder fusion node.

    NONE leaves the decoder untouched. ASPP placement is at the encoder
    bottleneck and handled by SegModel construction.
    """
    if config.variant not in AttentionVariant.__members__.values():
        raise UnsupportedConfigError(f"unknown attention variant {config.variant}")
    for node in decoder.nodes:
        channels = node.fuse[0].out_channels if hasattr(node, "fuse") else node.conv[-1][0].out_channels
        attn = make_node_attention(config, channels)
        if attn is not None:
            node.attn = attn
    return decoder


def _init_he_normal(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def build_model(config: ModelConfig) -> SegModel:
    """Construct a segmentation model from its configuration."""
    return SegModel(config)


def build_unet_baseline(config: ModelConfig | None = None) -> SegModel:
    """Classic UNet with the plain CNN encoder (default width schedule)."""
    if config is None:
        config = ModelConfig(architecture=Architecture.UNET, backbone=Backbone.PLAIN_CNN)
    return SegModel(config)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


@dataclass
class LoadReport:
    matched: list[str]
    missed: list[str]


def load_pretrained(model: nn.Module, weights_source) -> LoadReport:
    """Load parameters with matching names/shapes; report matched and missed.

    `weights_source` is a path to a torch-saved name->tensor mapping (a
    plain state dict or a dict with a 'state_dict' entry).
    """
    state = torch.load(weights_source, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    own = model.state_dict()
    matched, missed = [], []
    loadable = {}
    for name, tensor in own.items():
        if name in state and tuple(state[name].shape) == tuple(tensor.shape):
            loadable[name] = state[name]
            matched.append(name)
        else:
            missed.append(name)
    if not matched:
        raise ValueError(f"no parameters in {weights_source} match the model (wrong file?)")
    own.update(loadable)
    model.load_state_dict(own)
    return LoadReport(matched=matched, missed=missed)


def save_checkpoint(model: nn.Module, path) -> None:
    torch.save(model.state_dict(), path)
