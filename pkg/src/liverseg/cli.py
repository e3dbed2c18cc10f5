"""Command-line interface: prepare, train, evaluate, ablate, explain, report."""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np
import torch
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import data as data_mod
from . import explain as explain_mod
from . import nifti
from . import report as report_mod
from .data import SlicePolicy, Split, SplitLevel
from .experiment import (DataConfig, ExperimentConfig, prepare_dataset,
                         run_ablation, run_experiment)
from .metrics import evaluate_split
from .models import ModelConfig, build_model
from .phantom import PhantomSpec, generate_phantom
from .training import TrainingLog


@click.group()
def main():
    """Liver lesion segmentation laboratory."""


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True))
@click.option("--output", "output_dir", required=True, type=click.Path())
@click.option("--size", default=256, show_default=True)
@click.option("--split", default="0.7,0.2,0.1", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--level", type=click.Choice(["case", "slice"]), default="case", show_default=True)
@click.option("--policy", type=click.Choice(["lesion", "all"]), default="lesion", show_default=True)
def prepare(input_dir, output_dir, size, split, seed, level, policy):
    """Verify CT-mask pairs, slice, normalize, split; write the manifest CSV."""
    os.makedirs(output_dir, exist_ok=True)
    config = DataConfig(
        input_dir=input_dir, size=size, ratios=_parse_floats(split),
        level=SplitLevel(level.upper()),
        policy=SlicePolicy("LESION_ONLY" if policy == "lesion" else "ALL"))
    manifest_path = os.path.join(output_dir, "manifest.csv")
    prepared = prepare_dataset(config, seed, manifest_path=manifest_path)
    counts = {s.value: len(prepared.samples[s]) for s in Split}
    click.echo(f"manifest: {manifest_path}")
    click.echo(f"slices per split: {counts}; rejected cases: {len(prepared.rejected)}")
    stats = data_mod.tumor_area_stats(prepared.index)
    click.echo(f"tumor area stats: {json.dumps(stats)}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None,
              help="Override the config's data directory.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Override the config's output directory.")
def train(config_path, data_dir, out_dir):
    """Train a model from a YAML experiment config."""
    config = _load_config(config_path, data_dir, out_dir)
    manifest = run_experiment(config)
    click.echo(f"run directory: {config.output_dir}")
    click.echo(f"test means: {json.dumps(manifest['means'])}")


@main.command()
@click.option("--pred", "pred_dir", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_dir", required=True, type=click.Path(exists=True))
@click.option("--spacing", default="1.0,1.0", show_default=True)
@click.option("--out", "out_file", required=True, type=click.Path())
def evaluate(pred_dir, gt_dir, spacing, out_file):
    """Evaluate prediction masks against ground-truth masks (matched by filename)."""
    preds, gts = [], []
    for name in sorted(os.listdir(pred_dir)):
        stem = name.split(".")[0]
        gt_path = nifti.find_volume(gt_dir, stem) or os.path.join(gt_dir, name)
        if not os.path.exists(gt_path):
            raise click.ClickException(f"no ground truth for {name}")
        preds.extend(_load_mask_slices(os.path.join(pred_dir, name)))
        gts.extend(_load_mask_slices(gt_path))
    report = evaluate_split(preds, gts, _parse_floats(spacing))
    report.to_csv(out_file)
    click.echo(f"evaluated {report.n_slices} slices "
               f"({report.n_hd95_fallback} HD95 fallbacks) -> {out_file}")
    click.echo(json.dumps(report.means))


def _load_mask_slices(path) -> list[np.ndarray]:
    arr = np.load(path) if path.endswith(".npy") else nifti.read_volume(path)[0]
    arr = np.asarray(arr)
    if arr.ndim == 2:
        return [(arr > 0).astype(np.uint8)]
    return [(arr[:, :, z] > 0).astype(np.uint8) for z in range(arr.shape[2])]


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def ablate(config_path, data_dir, out_dir):
    """Run the attention-variant ablation grid and emit the combined table."""
    config = _load_config(config_path, data_dir, out_dir)
    summary = run_ablation(config)
    click.echo(open(summary["table_txt"]).read())
    if summary["failures"]:
        click.echo(f"failed variants: {summary['failures']}", err=True)
        sys.exit(1)


@main.command("explain")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="2D slice as .npy (normalized intensity).")
@click.option("--layer", default=None, help="Target layer name; defaults to the last conv.")
@click.option("--out", "out_png", required=True, type=click.Path())
def explain_cmd(checkpoint_path, input_path, layer, out_png):
    """Render a Grad-CAM heatmap overlay for one slice."""
    model = _load_model(checkpoint_path)
    image = np.load(input_path)
    heatmap = explain_mod.gradcam(model, image, layer)
    blended = explain_mod.overlay(heatmap, image, alpha=0.5)
    plt.imsave(out_png, np.clip(blended, 0, 1))
    heatmap_path = os.path.splitext(out_png)[0] + "_heatmap.npy"
    np.save(heatmap_path, heatmap.values)
    click.echo(f"layer: {heatmap.target_layer}; overlay: {out_png}; heatmap: {heatmap_path}")


@main.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None,
              help="Dataset directory for the model comparison strip.")
@click.option("--seed", default=0, show_default=True)
def report(run_dirs, out_dir, data_dir, seed):
    """Re-render curve figures and comparison strips from completed runs."""
    os.makedirs(out_dir, exist_ok=True)
    missing = []
    models = {}
    for run_dir in run_dirs:
        log_path = os.path.join(run_dir, "training_log.csv")
        if not os.path.exists(log_path):
            missing.append(log_path)
        else:
            log = TrainingLog.from_csv(log_path)
            name = os.path.basename(os.path.normpath(run_dir))
            report_mod.plot_training_curves(log, os.path.join(out_dir, f"curves_{name}.png"))
        ckpt = os.path.join(run_dir, "checkpoint.pt")
        if os.path.exists(ckpt):
            models[run_dir] = ckpt
        else:
            missing.append(ckpt)
    if data_dir and models:
        _comparison_strip(models, data_dir, out_dir, seed)
    if missing:
        click.echo("missing artifacts: " + ", ".join(missing), err=True)
    click.echo(f"report written to {out_dir}")


def _comparison_strip(models: dict, data_dir: str, out_dir: str, seed: int):
    from .training import predict_masks

    first_meta = json.load(open(os.path.join(next(iter(models)), "checkpoint.json")))
    size = first_meta["model_config"]["input_size"]
    prepared = prepare_dataset(DataConfig(input_dir=data_dir, size=size), seed)
    samples = (prepared.samples[Split.TEST] or prepared.samples[Split.VAL])[:1]
    named_preds = {}
    for run_dir in models:
        model = _load_model(os.path.join(run_dir, "checkpoint.pt"))
        named_preds[os.path.basename(os.path.normpath(run_dir))] = \
            predict_masks(model, samples)[0]
    report_mod.plot_comparison_strip(samples[0].image, samples[0].mask, named_preds,
                                     os.path.join(out_dir, "comparison_strip.png"))


def _load_model(checkpoint_path: str):
    meta_path = os.path.splitext(checkpoint_path)[0] + ".json"
    if not os.path.exists(meta_path):
        raise click.ClickException(f"missing checkpoint sidecar {meta_path}")
    meta = json.load(open(meta_path))
    model = build_model(ModelConfig.from_dict(meta["model_config"]))
    model.load_state_dict(torch.load(checkpoint_path, map_location="cpu", weights_only=True))
    model.eval()
    return model


def _load_config(config_path, data_dir, out_dir) -> ExperimentConfig:
    config = ExperimentConfig.from_yaml(config_path)
    if data_dir:
        config = ExperimentConfig(
            data=DataConfig(**{**config.data.__dict__, "input_dir": data_dir}),
            model=config.model, train=config.train, seed=config.seed,
            output_dir=out_dir or config.output_dir,
            ablation_attention=config.ablation_attention)
    elif out_dir:
        config.output_dir = out_dir
    return config


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--cases", default=4, show_default=True)
@click.option("--slices", default=8, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def phantom(out_dir, cases, slices, size, seed):
    """Generate a synthetic phantom corpus for desk-scale testing."""
    spec = PhantomSpec(n_cases=cases, slices_per_case=slices, image_size=size, seed=seed)
    pairs, index = generate_phantom(spec, out_dir)
    click.echo(f"wrote {len(pairs)} cases ({len(index.records)} slices) to {out_dir}")


if __name__ == "__main__":
    main()
