"""CE+Dice training recipe.

SGD with momentum and weight decay, poly learning-rate decay, combined
cross-entropy + soft Dice loss, periodic validation and best-checkpoint
tracking on validation Dice.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import metrics as metrics_mod
from .data import SliceSample

DICE_SMOOTH = 1e-5


class LrSchedule(str, Enum):
    POLY = "POLY"
    CONSTANT = "CONSTANT"


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0001
    batch_size: int = 4
    epochs: int = 100
    max_iterations: int = 6000
    loss_weights: tuple[float, float] = (0.5, 0.5)  # (w_ce, w_dice)
    seed: int = 0
    lr_schedule: LrSchedule = LrSchedule.POLY
    val_interval: int = 250

    def __post_init__(self):
        if min(self.lr0, self.batch_size, self.epochs, self.max_iterations) <= 0:
            raise ValueError("lr0, batch_size, epochs and max_iterations must be positive")
        if self.loss_weights[0] + self.loss_weights[1] <= 0:
            raise ValueError("loss weights must not both be zero")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss_weights" in d:
            d["loss_weights"] = tuple(d["loss_weights"])
        if "lr_schedule" in d:
            d["lr_schedule"] = LrSchedule(str(d["lr_schedule"]).upper())
        return cls(**d)


@dataclass
class TrainingLog:
    """Per-iteration loss records and per-validation metric records."""

    steps: list[dict] = field(default_factory=list)
    validations: list[dict] = field(default_factory=list)

    def record_step(self, iteration: int, total: float, ce: float, dice_val: float, lr: float):
        if self.steps and iteration <= self.steps[-1]["iteration"]:
            raise ValueError("iterations must be strictly increasing")
        for name, v in (("total_loss", total), ("loss_ce", ce), ("loss_dice", dice_val)):
            if not np.isfinite(v):
                raise FloatingPointError(f"non-finite {name}={v} at iteration {iteration}")
        self.steps.append({"iteration": iteration, "total_loss": total,
                           "loss_ce": ce, "loss_dice": dice_val, "lr": lr})

    def record_validation(self, iteration: int, val_dice: float, val_iou: float):
        self.validations.append({"iteration": iteration, "val_dice": val_dice, "val_iou": val_iou})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "iteration", "total_loss", "loss_ce", "loss_dice",
                             "lr", "val_dice", "val_iou"])
            for s in self.steps:
                writer.writerow(["step", s["iteration"], s["total_loss"], s["loss_ce"],
                                 s["loss_dice"], s["lr"], "", ""])
            for v in self.validations:
                writer.writerow(["val", v["iteration"], "", "", "", "",
                                 v["val_dice"], v["val_iou"]])

    @classmethod
    def from_csv(cls, path) -> "TrainingLog":
        log = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["kind"] == "step":
                    log.steps.append({"iteration": int(row["iteration"]),
                                      "total_loss": float(row["total_loss"]),
                                      "loss_ce": float(row["loss_ce"]),
                                      "loss_dice": float(row["loss_dice"]),
                                      "lr": float(row["lr"])})
                else:
                    log.validations.append({"iteration": int(row["iteration"]),
                                            "val_dice": float(row["val_dice"]),
                                            "val_iou": float(row["val_iou"])})
        return log


def soft_dice_loss(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """1 - mean-over-classes soft Dice between probabilities and one-hot labels."""
    if probs.ndim != 4 or target.shape != (probs.shape[0],) + probs.shape[2:]:
        raise ValueError(f"shape mismatch: probs {tuple(probs.shape)}, target {tuple(target.shape)}")
    n_classes = probs.shape[1]
    onehot = F.one_hot(target.long(), n_classes).permute(0, 3, 1, 2).to(probs.dtype)
    dims = (0, 2, 3)
    intersection = (probs * onehot).sum(dims)
    denom = probs.sum(dims) + onehot.sum(dims)
    dice_per_class = (2.0 * intersection + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    return 1.0 - dice_per_class.mean()


def ce_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel cross-entropy over softmax(logits); no class weighting."""
    if target.min() < 0 or target.max() >= logits.shape[1]:
        raise ValueError(f"label out of range [0, {logits.shape[1]})")
    return F.cross_entropy(logits, target.long())


def total_loss(logits: torch.Tensor, target: torch.Tensor,
               weights: tuple[float, float] = (0.5, 0.5)):
    """Weighted CE + Dice. Returns (total, ce, dice)."""
    ce = ce_loss(logits, target)
    dice_val = soft_dice_loss(F.softmax(logits, dim=1), target)
    return weights[0] * ce + weights[1] * dice_val, ce, dice_val


def lr_at(iteration: int, config: TrainConfig) -> float:
    """Learning rate at an iteration; POLY decays as (1 - t/T)^0.9."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    iteration = min(iteration, config.max_iterations)
    if config.lr_schedule == LrSchedule.CONSTANT:
        return config.lr0
    return config.lr0 * (1.0 - iteration / config.max_iterations) ** 0.9


def _to_batch(samples: list[SliceSample], device) -> tuple[torch.Tensor, torch.Tensor]:
    images = np.stack([s.image for s in samples])[:, None, :, :].astype(np.float32)
    masks = np.stack([s.mask for s in samples]).astype(np.int64)
    return torch.from_numpy(images).to(device), torch.from_numpy(masks).to(device)


@torch.no_grad()
def predict_masks(model: nn.Module, samples: list[SliceSample],
                  batch_size: int = 8, device="cpu") -> list[np.ndarray]:
    """Argmax foreground masks for a list of slices; model state unchanged."""
    was_training = model.training
    model.eval()
    preds = []
    for start in range(0, len(samples), batch_size):
        images, _ = _to_batch(samples[start:start + batch_size], device)
        logits = model(images)
        preds.extend(p for p in logits.argmax(dim=1).cpu().numpy().astype(np.uint8))
    if was_training:
        model.train()
    return preds


def validate(model: nn.Module, val_samples: list[SliceSample],
             device="cpu") -> tuple[float, float]:
    """Mean Dice/IoU of argmax predictions over a validation split."""
    if not val_samples:
        raise ValueError("empty validation split")
    preds = predict_masks(model, val_samples, device=device)
    dices, ious = [], []
    for pred, sample in zip(preds, val_samples):
        c = metrics_mod.confusion(pred, sample.mask)
        dices.append(metrics_mod.dice(c))
        ious.append(metrics_mod.iou(c))
    return float(np.mean(dices)), float(np.mean(ious))


@dataclass
class TrainResult:
    best_state: dict
    best_val_dice: float
    best_iteration: int
    log: TrainingLog


def train(model: nn.Module, train_samples: list[SliceSample],
          val_samples: list[SliceSample], config: TrainConfig,
          device="cpu", augment_fn=None) -> TrainResult:
    """SGD training loop stopping at min(epochs * steps_per_epoch, max_iterations)."""
    if not train_samples:
        raise ValueError("empty training split")
    if not val_samples:
        raise ValueError("empty validation split")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model.to(device).train()
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr0,
                                momentum=config.momentum, weight_decay=config.weight_decay)
    steps_per_epoch = max(1, (len(train_samples) + config.batch_size - 1) // config.batch_size)
    n_iterations = min(config.epochs * steps_per_epoch, config.max_iterations)
    log = TrainingLog()
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    best_val_dice, best_iteration = -1.0, 0

    order: list[int] = []
    for iteration in range(n_iterations):
        if len(order) < config.batch_size:
            order.extend(rng.permutation(len(train_samples)).tolist())
        batch_idx, order = order[:config.batch_size], order[config.batch_size:]
        batch = [train_samples[i] for i in batch_idx]
        if augment_fn is not None:
            batch = [augment_fn(s, rng) for s in batch]
        images, masks = _to_batch(batch, device)

        lr = lr_at(iteration, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        optimizer.zero_grad()
        loss, ce, dice_val = total_loss(model(images), masks, config.loss_weights)
        if not torch.isfinite(loss):
            raise FloatingPointError(
                f"non-finite loss at iteration {iteration}: total={loss.item()}, "
                f"ce={ce.item()}, dice={dice_val.item()}")
        loss.backward()
        optimizer.step()
        log.record_step(iteration + 1, float(loss.item()), float(ce.item()),
                        float(dice_val.item()), lr)

        is_last = iteration + 1 == n_iterations
        if (iteration + 1) % config.val_interval == 0 or is_last:
            val_dice, val_iou = validate(model, val_samples, device=device)
            log.record_validation(iteration + 1, val_dice, val_iou)
            if val_dice > best_val_dice:
                best_val_dice = val_dice
                best_iteration = iteration + 1
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return TrainResult(best_state=best_state, best_val_dice=best_val_dice,
                       best_iteration=best_iteration, log=log)


def save_training_artifacts(result: TrainResult, out_dir: str,
                            model_config_dict: dict, train_config: TrainConfig) -> dict:
    """Write checkpoint, JSON sidecar and the training log CSV. Returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.pt")
    meta_path = os.path.join(out_dir, "checkpoint.json")
    log_path = os.path.join(out_dir, "training_log.csv")
    torch.save(result.best_state, ckpt_path)
    meta = {
        "model_config": model_config_dict,
        "train_config": {**asdict(train_config),
                         "lr_schedule": train_config.lr_schedule.value},
        "best_val_dice": result.best_val_dice,
        "best_iteration": result.best_iteration,
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2)
    result.log.to_csv(log_path)
    return {"checkpoint": ckpt_path, "checkpoint_meta": meta_path, "log": log_path}
