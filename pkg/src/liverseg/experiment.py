"""Experiment orchestration: prepare -> train -> evaluate -> report.

One declarative YAML config fully determines a run; the ablation driver
shares one prepared dataset across all variants so splits are identical.
"""

from __future__ import annotations

import json
import os
import traceback
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import yaml

from . import data as data_mod
from . import report as report_mod
from .data import (DatasetIndex, SliceSample, SlicePolicy, Split, SplitLevel,
                   augment, extract_slices, normalize_slice, resize_sample,
                   scan_directory, split_dataset, write_manifest)
from .metrics import MetricsReport, evaluate_split
from .models import ModelConfig, build_model, parameter_count
from .training import TrainConfig, predict_masks, save_training_artifacts, train


@dataclass(frozen=True)
class DataConfig:
    input_dir: str
    size: int = 64
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    level: SplitLevel = SplitLevel.CASE
    policy: SlicePolicy = SlicePolicy.LESION_ONLY
    spacing: tuple[float, float] = (1.0, 1.0)

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        return cls(
            input_dir=d["input"],
            size=int(d.get("size", 64)),
            ratios=tuple(d.get("ratios", (0.7, 0.2, 0.1))),
            level=SplitLevel(str(d.get("level", "CASE")).upper()),
            policy=SlicePolicy(str(d.get("policy", "LESION_ONLY")).upper()),
            spacing=tuple(d.get("spacing", (1.0, 1.0))),
        )


@dataclass
class ExperimentConfig:
    data: DataConfig
    model: ModelConfig
    train: TrainConfig
    seed: int = 0
    output_dir: str = "runs/experiment"
    ablation_attention: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        seed = int(d.get("seed", 0))
        train_dict = dict(d.get("train", {}))
        train_dict.setdefault("seed", seed)
        return cls(
            data=DataConfig.from_dict(d["data"]),
            model=ModelConfig.from_dict(d.get("model", {})),
            train=TrainConfig.from_dict(train_dict),
            seed=seed,
            output_dir=d.get("output_dir", "runs/experiment"),
            ablation_attention=[str(v).upper() for v in d.get("ablation", {}).get("attention", [])],
        )

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))


@dataclass
class PreparedDataset:
    samples: dict[Split, list[SliceSample]]
    index: DatasetIndex
    rejected: list


def prepare_dataset(config: DataConfig, seed: int,
                    manifest_path: str | None = None) -> PreparedDataset:
    """Verify, slice, normalize, resize and split a corpus directory."""
    if not os.path.isdir(config.input_dir):
        raise FileNotFoundError(f"data directory not found: {config.input_dir}")
    pairs = scan_directory(config.input_dir)
    if not pairs:
        raise FileNotFoundError(f"no CT-mask pairs found under {config.input_dir}")
    valid = [p for p in pairs if p.valid]
    rejected = [p for p in pairs if not p.valid]
    all_samples: list[SliceSample] = []
    for pair in valid:
        for sample in extract_slices(pair, config.policy):
            sample.image = normalize_slice(sample.image)
            all_samples.append(resize_sample(sample, config.size))
    if not all_samples:
        raise ValueError("no slices extracted from valid pairs")
    index = DatasetIndex(records=[
        data_mod.IndexRecord(case_id=s.case_id, slice_index=s.slice_index,
                             lesion_pixels=s.lesion_pixels)
        for s in all_samples
    ])
    index = split_dataset(index, config.ratios, seed=seed, level=config.level)
    split_of = {(r.case_id, r.slice_index): r.split for r in index.records}
    samples: dict[Split, list[SliceSample]] = {s: [] for s in Split}
    for sample in all_samples:
        sample.split = split_of[(sample.case_id, sample.slice_index)]
        samples[sample.split].append(sample)
    if manifest_path:
        write_manifest(manifest_path, index, rejected)
    return PreparedDataset(samples=samples, index=index, rejected=rejected)


def _model_name(model_config: ModelConfig) -> str:
    base = {"UNET": "UNet", "UNET3P": "UNet3+"}[model_config.architecture.value]
    backbone = model_config.backbone.value.replace("_", "").title().replace("Resnet", "ResNet")
    name = f"{backbone}{base}" if model_config.backbone.value != "PLAIN_CNN" else base
    variant = model_config.attention.variant.value
    if variant != "NONE":
        name += " with " + variant.replace("_", "+")
    return name


def run_experiment(config: ExperimentConfig, run_dir: str | None = None,
                   dataset: PreparedDataset | None = None) -> dict:
    """Execute prepare -> train -> evaluate and emit all artifacts.

    Returns the artifact manifest (also written as manifest.json).
    Failures leave partial artifacts plus a FAILED marker in the run dir.
    """
    run_dir = run_dir or config.output_dir
    os.makedirs(run_dir, exist_ok=True)
    manifest: dict = {"status": "running"}
    try:
        torch.manual_seed(config.seed)
        data_manifest = os.path.join(run_dir, "manifest.csv")
        if dataset is None:
            dataset = prepare_dataset(config.data, config.seed, manifest_path=data_manifest)
        else:
            write_manifest(data_manifest, dataset.index, dataset.rejected)
        manifest["manifest"] = data_manifest

        model = build_model(config.model)
        result = train(model, dataset.samples[Split.TRAIN], dataset.samples[Split.VAL],
                       config.train, augment_fn=augment)
        manifest.update(save_training_artifacts(
            result, run_dir, config.model.to_dict(), config.train))

        model.load_state_dict(result.best_state)
        test_samples = dataset.samples[Split.TEST] or dataset.samples[Split.VAL]
        preds = predict_masks(model, test_samples)
        gts = [s.mask for s in test_samples]
        metrics_report = evaluate_split(preds, gts, config.data.spacing)

        paths = report_mod.render_run_report(
            run_dir, result.log,
            images=[s.image for s in test_samples[:4]],
            gts=gts[:4], preds=preds[:4],
            model_name=_model_name(config.model),
            params=parameter_count(model),
            report=metrics_report)
        manifest.update(paths)
        manifest["means"] = metrics_report.means
        manifest["status"] = "ok"
    except Exception:
        manifest["status"] = "failed"
        marker = os.path.join(run_dir, "FAILED")
        with open(marker, "w") as fh:
            fh.write(traceback.format_exc())
        manifest["failure_marker"] = marker
        _write_manifest_json(run_dir, manifest)
        raise
    _write_manifest_json(run_dir, manifest)
    return manifest


def _write_manifest_json(run_dir: str, manifest: dict) -> None:
    path = os.path.join(run_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)


def ablation_grid(config: ExperimentConfig) -> list[ModelConfig]:
    """Model variants differing only in the attention axis."""
    variants = config.ablation_attention or ["NONE", "SE", "CBAM", "ASPP", "CBAM_ASPP"]
    grid = []
    for name in variants:
        attn = replace(config.model.attention,
                       variant=type(config.model.attention.variant)(name))
        grid.append(replace(config.model, attention=attn))
    return grid


def run_ablation(config: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Train and evaluate each grid variant on identical splits and seeds.

    Per-variant failures are recorded and the remaining variants proceed.
    """
    out_dir = out_dir or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    dataset = prepare_dataset(config.data, config.seed)
    results: list[tuple[str, int, MetricsReport]] = []
    failures: dict[str, str] = {}
    run_dirs = {}
    for model_config in ablation_grid(config):
        name = _model_name(model_config)
        variant_dir = os.path.join(out_dir, model_config.attention.variant.value.lower())
        run_dirs[name] = variant_dir
        variant_config = replace(config, model=model_config)
        try:
            manifest = run_experiment(variant_config, run_dir=variant_dir, dataset=dataset)
        except Exception as exc:
            failures[name] = str(exc)
            continue
        model = build_model(model_config)
        report = _reload_report(manifest)
        results.append((name, parameter_count(model), report))
    rows = report_mod.table_rows(results)
    table_csv = os.path.join(out_dir, "ablation_table.csv")
    table_txt = os.path.join(out_dir, "ablation_table.txt")
    report_mod.write_table_csv(rows, table_csv)
    with open(table_txt, "w") as fh:
        fh.write(report_mod.format_table(rows) + "\n")
    summary = {"table_csv": table_csv, "table_txt": table_txt,
               "runs": run_dirs, "failures": failures, "rows": rows,
               "best": report_mod.best_per_column(rows) if rows else {}}
    with open(os.path.join(out_dir, "ablation_summary.json"), "w") as fh:
        json.dump({k: v for k, v in summary.items() if k != "rows"}, fh, indent=2)
    return summary


def _reload_report(manifest: dict) -> MetricsReport:
    # rebuild an aggregate-only report from the run's recorded means
    means = manifest["means"]
    return MetricsReport(rows=[], means=means, n_slices=0,
                         n_hd95_fallback=0, n_undefined_rates=0)
