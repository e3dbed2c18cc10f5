"""Grad-CAM heatmaps for segmentation predictions.

The target score sums the foreground logit over pixels predicted as
foreground (falling back to the mean foreground logit when the predicted
mask is empty). Activation maps of the chosen convolutional layer are
weighted by spatially averaged gradients, rectified, upsampled and
min-max normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
import matplotlib

FOREGROUND_CLASS = 1


@dataclass
class Heatmap:
    values: np.ndarray  # H×W in [0, 1]
    target_layer: str
    empty_prediction_fallback: bool = False


def conv_layer_names(model: nn.Module) -> list[str]:
    return [name for name, module in model.named_modules() if isinstance(module, nn.Conv2d)]


def default_target_layer(model: nn.Module) -> str:
    """Name of the last convolution before the classification head."""
    names = conv_layer_names(model)
    candidates = [n for n in names if not n.startswith("head")]
    if not candidates:
        raise ValueError("model has no convolutional layers outside the head")
    return candidates[-1]


def gradcam(model: nn.Module, image: np.ndarray, target_layer: str | None = None) -> Heatmap:
    """Grad-CAM heatmap of a single slice (H×W), normalized to [0, 1]."""
    if target_layer is None:
        target_layer = default_target_layer(model)
    modules = dict(model.named_modules())
    if target_layer not in modules:
        raise ValueError(f"unknown layer {target_layer!r}; available: {conv_layer_names(model)}")
    layer = modules[target_layer]

    activations: list[torch.Tensor] = []

    def hook(_module, _inputs, output):
        activations.append(output)

    handle = layer.register_forward_hook(hook)
    was_training = model.training
    model.eval()
    try:
        x = torch.from_numpy(np.asarray(image, dtype=np.float32))[None, None, :, :]
        logits = model(x)
        if not activations:
            raise ValueError(f"layer {target_layer!r} was not reached in the forward pass")
        act = activations[-1]
        pred_fg = logits.argmax(dim=1) == FOREGROUND_CLASS
        fg_logit = logits[:, FOREGROUND_CLASS]
        fallback = not bool(pred_fg.any())
        if fallback:
            score = fg_logit.mean()
        else:
            score = fg_logit[pred_fg].sum()
        grads = torch.autograd.grad(score, act)[0]
        weights = grads.mean(dim=(2, 3), keepdim=True)
        raw = F.relu((weights * act).sum(dim=1, keepdim=True))
        raw = F.interpolate(raw, size=x.shape[2:], mode="bilinear", align_corners=False)
        raw = raw[0, 0].detach().numpy()
    finally:
        handle.remove()
        if was_training:
            model.train()
    peak = raw.max()
    values = raw / peak if peak > 0 else np.zeros_like(raw)
    return Heatmap(values=values, target_layer=target_layer,
                   empty_prediction_fallback=fallback)


def overlay(heatmap: Heatmap | np.ndarray, image: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend a colormapped heatmap over a grayscale slice. Returns H×W×3 in [0, 1]."""
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    image = np.asarray(image, dtype=np.float64)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if values.shape != image.shape:
        raise ValueError(f"shape mismatch: heatmap {values.shape} vs image {image.shape}")
    span = image.max() - image.min()
    gray = (image - image.min()) / span if span > 0 else np.zeros_like(image)
    base = np.repeat(gray[:, :, None], 3, axis=2)
    colored = matplotlib.colormaps["inferno"](values)[:, :, :3]
    return (1.0 - alpha) * base + alpha * colored
