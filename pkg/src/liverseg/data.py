"""CT-mask data pipeline.

Verifies volume pairs, extracts and normalizes 2D slices, augments,
splits into train/val/test and maintains the metadata manifest.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from enum import Enum

import cv2
import numpy as np

from . import nifti


class RejectionReason(str, Enum):
    DIM_MISMATCH = "DIM_MISMATCH"
    SLICE_COUNT_MISMATCH = "SLICE_COUNT_MISMATCH"
    FILE_CORRUPT = "FILE_CORRUPT"
    NO_LESION = "NO_LESION"


class Split(str, Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"


class SlicePolicy(str, Enum):
    LESION_ONLY = "LESION_ONLY"
    ALL = "ALL"


@dataclass
class VolumePair:
    """One case's CT volume and lesion mask with verification status."""

    case_id: str
    ct_path: str = ""
    mask_path: str = ""
    shape: tuple[int, int, int] | None = None
    voxel_spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    rejection_reasons: list[RejectionReason] = field(default_factory=list)
    # volumes kept in memory when verified from arrays rather than files
    ct_volume: np.ndarray | None = None
    mask_volume: np.ndarray | None = None

    @property
    def valid(self) -> bool:
        return not self.rejection_reasons


@dataclass
class SliceSample:
    """One 2D slice with its binary mask; the training unit."""

    case_id: str
    slice_index: int
    image: np.ndarray
    mask: np.ndarray
    split: Split | None = None

    @property
    def lesion_pixels(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True)
class IndexRecord:
    case_id: str
    slice_index: int
    lesion_pixels: int
    split: Split | None = None


@dataclass
class DatasetIndex:
    records: list[IndexRecord]
    source_manifest: str = ""

    def __post_init__(self):
        keys = [(r.case_id, r.slice_index) for r in self.records]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (case_id, slice_index) in dataset index")

    def by_split(self, split: Split) -> list[IndexRecord]:
        return [r for r in self.records if r.split == split]


def verify_pair(ct_volume, mask_volume, case_id: str = "",
                voxel_spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> VolumePair:
    """Check a CT-mask pair for dimensional alignment, slice count and lesion presence.

    A load failure is signalled by passing None for the broken side; it is
    recorded as FILE_CORRUPT instead of raised so a corpus scan can continue.
    """
    reasons: list[RejectionReason] = []
    if ct_volume is None or mask_volume is None:
        reasons.append(RejectionReason.FILE_CORRUPT)
        return VolumePair(case_id=case_id, rejection_reasons=reasons)
    ct_volume = np.asarray(ct_volume)
    mask_volume = np.asarray(mask_volume)
    if ct_volume.shape[:2] != mask_volume.shape[:2]:
        reasons.append(RejectionReason.DIM_MISMATCH)
    if ct_volume.shape[2] != mask_volume.shape[2]:
        reasons.append(RejectionReason.SLICE_COUNT_MISMATCH)
    if not np.any(mask_volume):
        reasons.append(RejectionReason.NO_LESION)
    return VolumePair(
        case_id=case_id,
        shape=tuple(ct_volume.shape),
        voxel_spacing=voxel_spacing,
        rejection_reasons=reasons,
        ct_volume=ct_volume,
        mask_volume=mask_volume,
    )


def verify_pair_files(case_id: str, ct_path: str, mask_path: str) -> VolumePair:
    """Load and verify a pair from disk; unreadable files become FILE_CORRUPT."""
    ct = mask = None
    spacing = (1.0, 1.0, 1.0)
    try:
        ct, spacing = nifti.read_volume(ct_path)
        mask, _ = nifti.read_volume(mask_path)
    except (OSError, ValueError):
        ct = mask = None
    pair = verify_pair(ct, mask, case_id=case_id, voxel_spacing=spacing)
    pair.ct_path = ct_path
    pair.mask_path = mask_path
    return pair


def scan_directory(directory: str) -> list[VolumePair]:
    """Verify every `<case>_ct.*` / `<case>_mask.*` pair under a directory."""
    case_ids = sorted({
        name.split("_ct")[0]
        for name in os.listdir(directory)
        if "_ct." in name
    })
    pairs = []
    for case_id in case_ids:
        ct_path = nifti.find_volume(directory, f"{case_id}_ct")
        mask_path = nifti.find_volume(directory, f"{case_id}_mask")
        if ct_path is None or mask_path is None:
            pairs.append(VolumePair(case_id=case_id,
                                    rejection_reasons=[RejectionReason.FILE_CORRUPT]))
            continue
        pairs.append(verify_pair_files(case_id, ct_path, mask_path))
    return pairs


def extract_slices(pair: VolumePair, policy: SlicePolicy = SlicePolicy.LESION_ONLY) -> list[SliceSample]:
    """Axial slices of a valid pair; LESION_ONLY keeps planes with >=1 lesion pixel."""
    if not pair.valid:
        raise ValueError(f"cannot extract slices from invalid pair {pair.case_id!r}: "
                         f"{[r.value for r in pair.rejection_reasons]}")
    ct, mask = pair.ct_volume, pair.mask_volume
    if ct is None or mask is None:
        ct, _ = nifti.read_volume(pair.ct_path)
        mask, _ = nifti.read_volume(pair.mask_path)
    samples = []
    for z in range(ct.shape[2]):
        mask_plane = (np.asarray(mask[:, :, z]) > 0).astype(np.uint8)
        if policy == SlicePolicy.LESION_ONLY and not mask_plane.any():
            continue
        samples.append(SliceSample(
            case_id=pair.case_id,
            slice_index=z,
            image=np.asarray(ct[:, :, z], dtype=np.float32),
            mask=mask_plane,
        ))
    return samples


def normalize_slice(image: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance normalization; constant slices map to all zeros."""
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise ValueError("non-finite values in slice")
    std = image.std()
    if std < 1e-8:
        return np.zeros_like(image)
    return (image - image.mean()) / std


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    if size <= 0:
        raise ValueError(f"size must be positive, got {size}")
    return cv2.resize(image.astype(np.float32), (size, size), interpolation=cv2.INTER_LINEAR)


def resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    if size <= 0:
        raise ValueError(f"size must be positive, got {size}")
    out = cv2.resize(mask.astype(np.float32), (size, size), interpolation=cv2.INTER_NEAREST)
    return (out > 0.5).astype(np.uint8)


def resize_sample(sample: SliceSample, size: int) -> SliceSample:
    """Bilinear resize for the image, nearest-neighbor plus re-binarization for the mask."""
    return replace(sample,
                   image=resize_image(sample.image, size),
                   mask=resize_mask(sample.mask, size))


def apply_flips_rotation(image: np.ndarray, mask: np.ndarray,
                         hflip: bool, vflip: bool, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Apply the identical flip/rot90 transform to image and mask."""
    if hflip:
        image, mask = image[:, ::-1], mask[:, ::-1]
    if vflip:
        image, mask = image[::-1, :], mask[::-1, :]
    if k % 4:
        image, mask = np.rot90(image, k), np.rot90(mask, k)
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def augment(sample: SliceSample, rng: np.random.Generator) -> SliceSample:
    """Random horizontal/vertical flips (p=0.5 each) and a random 90-degree rotation."""
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    k = int(rng.integers(0, 4))
    image, mask = apply_flips_rotation(sample.image, sample.mask, hflip, vflip, k)
    return replace(sample, image=image, mask=mask)


def _split_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


class SplitLevel(str, Enum):
    CASE = "CASE"
    SLICE = "SLICE"


def split_dataset(index: DatasetIndex, ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
                  seed: int = 0, level: SplitLevel = SplitLevel.CASE) -> DatasetIndex:
    """Assign TRAIN/VAL/TEST splits, deterministic per seed.

    CASE level keeps all slices of a case in one split; SLICE level
    shuffles slices independently.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if not index.records:
        raise ValueError("empty dataset index")
    rng = np.random.default_rng(seed)
    if level == SplitLevel.CASE:
        cases = sorted({r.case_id for r in index.records})
        order = [cases[i] for i in rng.permutation(len(cases))]
        n_train, n_val, _ = _split_counts(len(order), ratios)
        assignment = {}
        for i, case_id in enumerate(order):
            if i < n_train:
                assignment[case_id] = Split.TRAIN
            elif i < n_train + n_val:
                assignment[case_id] = Split.VAL
            else:
                assignment[case_id] = Split.TEST
        records = [replace(r, split=assignment[r.case_id]) for r in index.records]
    else:
        order = rng.permutation(len(index.records))
        n_train, n_val, _ = _split_counts(len(index.records), ratios)
        splits: list[Split | None] = [None] * len(index.records)
        for rank, i in enumerate(order):
            if rank < n_train:
                splits[i] = Split.TRAIN
            elif rank < n_train + n_val:
                splits[i] = Split.VAL
            else:
                splits[i] = Split.TEST
        records = [replace(r, split=s) for r, s in zip(index.records, splits)]
    return DatasetIndex(records=records, source_manifest=index.source_manifest)


def tumor_area_stats(index: DatasetIndex) -> dict[str, dict[str, float] | None]:
    """Per-split quartiles, median and max of lesion pixel counts."""
    if not index.records:
        raise ValueError("empty dataset index")
    stats: dict[str, dict[str, float] | None] = {}
    for split in Split:
        areas = [r.lesion_pixels for r in index.records if r.split == split]
        if not areas:
            stats[split.value] = None
            continue
        q25, q50, q75 = np.percentile(areas, [25, 50, 75])  # linear interpolation
        stats[split.value] = {
            "q25": float(q25),
            "median": float(q50),
            "q75": float(q75),
            "max": float(max(areas)),
        }
    return stats


MANIFEST_HEADER = ["case_id", "slice_index", "lesion_pixels", "split", "valid", "reasons"]


def write_manifest(path, index: DatasetIndex, rejected: list[VolumePair] | None = None) -> None:
    """Write the metadata CSV; rejected cases get a single row with their reasons."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for r in index.records:
            writer.writerow([r.case_id, r.slice_index, r.lesion_pixels,
                             r.split.value if r.split else "", "true", ""])
        for pair in rejected or []:
            writer.writerow([pair.case_id, -1, 0, "", "false",
                             ";".join(x.value for x in pair.rejection_reasons)])


def read_manifest(path) -> DatasetIndex:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["valid"] != "true":
                continue
            records.append(IndexRecord(
                case_id=row["case_id"],
                slice_index=int(row["slice_index"]),
                lesion_pixels=int(row["lesion_pixels"]),
                split=Split(row["split"]) if row["split"] else None,
            ))
    return DatasetIndex(records=records, source_manifest=str(path))
