"""Synthetic phantom datasets for desk-scale testing.

Each case is a stack of slices with Gaussian background noise plus
brighter elliptical lesions; masks mark exact ellipse interiors.
Deterministic per seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import nifti
from .data import DatasetIndex, IndexRecord, VolumePair

LESION_INTENSITY = 2.5  # offset above the noise background


@dataclass(frozen=True)
class PhantomSpec:
    n_cases: int = 4
    slices_per_case: int = 8
    image_size: int = 64
    lesion_count_range: tuple[int, int] = (1, 3)
    lesion_radius_range: tuple[int, int] = (4, 10)
    noise_std: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.image_size <= 0:
            raise ValueError("image_size must be positive")
        if self.lesion_count_range[0] > self.lesion_count_range[1] or self.lesion_count_range[0] < 1:
            raise ValueError(f"bad lesion_count_range {self.lesion_count_range}")
        if self.lesion_radius_range[0] > self.lesion_radius_range[1] or self.lesion_radius_range[0] < 1:
            raise ValueError(f"bad lesion_radius_range {self.lesion_radius_range}")


def _ellipse_mask(size: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def generate_slice(spec: PhantomSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One noisy slice and its lesion mask; always contains >=1 lesion pixel."""
    size = spec.image_size
    image = rng.normal(0.0, spec.noise_std, (size, size)).astype(np.float32)
    mask = np.zeros((size, size), dtype=np.uint8)
    n_lesions = int(rng.integers(spec.lesion_count_range[0], spec.lesion_count_range[1] + 1))
    r_lo, r_hi = spec.lesion_radius_range
    for _ in range(n_lesions):
        ry = float(rng.uniform(r_lo, r_hi))
        rx = float(rng.uniform(r_lo, r_hi))
        cy = float(rng.uniform(ry, size - 1 - ry))
        cx = float(rng.uniform(rx, size - 1 - rx))
        ellipse = _ellipse_mask(size, cy, cx, ry, rx)
        mask[ellipse] = 1
        image[ellipse] += LESION_INTENSITY
    if not mask.any():  # radii below one pixel; force a center pixel
        mask[size // 2, size // 2] = 1
        image[size // 2, size // 2] += LESION_INTENSITY
    return image, mask


def generate_case(spec: PhantomSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Stack slices_per_case phantom slices into H×W×D volumes."""
    images, masks = [], []
    for _ in range(spec.slices_per_case):
        image, mask = generate_slice(spec, rng)
        images.append(image)
        masks.append(mask)
    return np.stack(images, axis=-1), np.stack(masks, axis=-1)


def generate_phantom(spec: PhantomSpec, output_dir: str,
                     file_format: str = "npz") -> tuple[list[VolumePair], DatasetIndex]:
    """Write a phantom corpus to disk and return its pairs and index."""
    os.makedirs(output_dir, exist_ok=True)
    if not os.path.isdir(output_dir):
        raise OSError(f"cannot create output directory {output_dir}")
    rng = np.random.default_rng(spec.seed)
    pairs, records = [], []
    for c in range(spec.n_cases):
        case_id = f"phantom{c:03d}"
        ct, mask = generate_case(spec, rng)
        ct_path = os.path.join(output_dir, f"{case_id}_ct.{file_format}")
        mask_path = os.path.join(output_dir, f"{case_id}_mask.{file_format}")
        nifti.write_volume(ct_path, ct)
        nifti.write_volume(mask_path, mask)
        pairs.append(VolumePair(
            case_id=case_id, ct_path=ct_path, mask_path=mask_path,
            shape=ct.shape, ct_volume=ct, mask_volume=mask,
        ))
        for z in range(spec.slices_per_case):
            records.append(IndexRecord(
                case_id=case_id, slice_index=z,
                lesion_pixels=int(np.count_nonzero(mask[:, :, z])),
            ))
    return pairs, DatasetIndex(records=records)
