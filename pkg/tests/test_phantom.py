import numpy as np
import pytest

from liverseg import nifti
from liverseg.data import scan_directory
from liverseg.phantom import PhantomSpec, generate_phantom


def test_deterministic_per_seed(tmp_path):
    spec = PhantomSpec(n_cases=2, slices_per_case=3, image_size=32, seed=5)
    generate_phantom(spec, str(tmp_path / "a"))
    generate_phantom(spec, str(tmp_path / "b"))
    for name in ("phantom000_ct.npz", "phantom001_mask.npz"):
        va, _ = nifti.read_volume(str(tmp_path / "a" / name))
        vb, _ = nifti.read_volume(str(tmp_path / "b" / name))
        assert np.array_equal(va, vb)


def test_every_plane_has_lesion(tmp_path):
    spec = PhantomSpec(n_cases=4, slices_per_case=8, image_size=48, seed=1)
    pairs, index = generate_phantom(spec, str(tmp_path))
    assert len(index.records) == 32
    for pair in pairs:
        for z in range(spec.slices_per_case):
            assert pair.mask_volume[:, :, z].sum() >= 1


def test_lesions_brighter_than_background(tmp_path):
    spec = PhantomSpec(n_cases=2, slices_per_case=4, image_size=48, seed=2)
    pairs, _ = generate_phantom(spec, str(tmp_path))
    for pair in pairs:
        for z in range(spec.slices_per_case):
            img = pair.ct_volume[:, :, z]
            mask = pair.mask_volume[:, :, z].astype(bool)
            assert img[mask].mean() > img[~mask].mean()


def test_generated_corpus_verifies(tmp_path):
    spec = PhantomSpec(n_cases=3, slices_per_case=2, image_size=32, seed=3)
    generate_phantom(spec, str(tmp_path))
    pairs = scan_directory(str(tmp_path))
    assert len(pairs) == 3
    assert all(p.valid for p in pairs)


def test_bad_spec_rejected():
    with pytest.raises(ValueError):
        PhantomSpec(image_size=0)
    with pytest.raises(ValueError):
        PhantomSpec(lesion_radius_range=(5, 2))
