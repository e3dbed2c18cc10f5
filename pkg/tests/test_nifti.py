import numpy as np
import pytest

from liverseg import nifti


@pytest.mark.parametrize("suffix", [".nii", ".nii.gz", ".npy", ".npz"])
def test_roundtrip(tmp_path, suffix):
    vol = np.random.default_rng(0).normal(size=(7, 5, 3)).astype(np.float32)
    path = str(tmp_path / f"vol{suffix}")
    nifti.write_volume(path, vol, spacing=(0.8, 0.8, 2.5))
    back, spacing = nifti.read_volume(path)
    assert np.allclose(back, vol)
    if suffix in (".nii", ".nii.gz", ".npz"):
        assert spacing == pytest.approx((0.8, 0.8, 2.5))


def test_integer_mask_roundtrip(tmp_path):
    mask = (np.random.default_rng(1).random((6, 6, 4)) > 0.5).astype(np.uint8)
    path = str(tmp_path / "mask.nii.gz")
    nifti.write_volume(path, mask)
    back, _ = nifti.read_volume(path)
    assert back.dtype == np.uint8
    assert np.array_equal(back, mask)


def test_truncated_file_errors(tmp_path):
    path = tmp_path / "bad.nii"
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(nifti.NiftiError):
        nifti.read_volume(str(path))


def test_garbage_magic_errors(tmp_path):
    path = tmp_path / "bad.nii"
    path.write_bytes(b"\x00" * 400)
    with pytest.raises(nifti.NiftiError):
        nifti.read_volume(str(path))


def test_find_volume(tmp_path):
    vol = np.zeros((2, 2, 2), dtype=np.float32)
    nifti.write_volume(str(tmp_path / "c1_ct.npz"), vol)
    assert nifti.find_volume(str(tmp_path), "c1_ct").endswith("c1_ct.npz")
    assert nifti.find_volume(str(tmp_path), "c2_ct") is None
