"""Minimal NIfTI-1 volume I/O.

Reads and writes single-file .nii / .nii.gz with the small header subset
needed here (dims, datatype, pixdim, scaling). Plain .npy / .npz arrays
are accepted as an interchange fallback so synthetic phantoms need no
medical-format tooling.
"""

from __future__ import annotations

import gzip
import os
import struct

import numpy as np

_HDR_SIZE = 348
_MAGIC = b"n+1\x00"

# nifti datatype code -> numpy dtype
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class NiftiError(IOError):
    pass


def _open(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read_volume(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Load a 3D volume. Returns (array H×W×D, voxel spacing (sx, sy, sz))."""
    path = str(path)
    if path.endswith(".npy"):
        return np.load(path), (1.0, 1.0, 1.0)
    if path.endswith(".npz"):
        with np.load(path) as data:
            vol = data["volume"]
            spacing = tuple(float(s) for s in data["spacing"]) if "spacing" in data else (1.0, 1.0, 1.0)
        return vol, spacing
    with _open(path, "rb") as fh:
        hdr = fh.read(_HDR_SIZE)
        if len(hdr) < _HDR_SIZE:
            raise NiftiError(f"{path}: truncated header")
        sizeof_hdr = struct.unpack("<i", hdr[0:4])[0]
        if sizeof_hdr != _HDR_SIZE:
            raise NiftiError(f"{path}: not a NIfTI-1 file (sizeof_hdr={sizeof_hdr})")
        magic = hdr[344:348]
        if magic not in (b"n+1\x00", b"ni1\x00"):
            raise NiftiError(f"{path}: bad magic {magic!r}")
        dim = struct.unpack("<8h", hdr[40:56])
        datatype = struct.unpack("<h", hdr[70:72])[0]
        pixdim = struct.unpack("<8f", hdr[76:108])
        vox_offset = struct.unpack("<f", hdr[108:112])[0]
        scl_slope, scl_inter = struct.unpack("<2f", hdr[112:120])
        ndim = dim[0]
        if ndim < 3:
            raise NiftiError(f"{path}: expected a 3D volume, got {ndim}D")
        shape = tuple(dim[1:1 + ndim])
        if any(s > 1 for s in shape[3:]):
            raise NiftiError(f"{path}: higher-dimensional volumes unsupported (dim={shape})")
        shape = shape[:3]
        if datatype not in _DTYPES:
            raise NiftiError(f"{path}: unsupported datatype code {datatype}")
        dtype = np.dtype(_DTYPES[datatype]).newbyteorder("<")
        fh.seek(int(vox_offset))
        raw = fh.read(int(np.prod(shape)) * dtype.itemsize)
        if len(raw) < int(np.prod(shape)) * dtype.itemsize:
            raise NiftiError(f"{path}: truncated data section")
    # nifti data is Fortran-ordered (x fastest)
    vol = np.frombuffer(raw, dtype=dtype).reshape(shape, order="F")
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        vol = vol.astype(np.float32) * slope + scl_inter
    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    return np.asarray(vol), spacing


def write_volume(path, volume: np.ndarray,
                 spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> None:
    """Write a 3D array as NIfTI-1 (.nii/.nii.gz) or as .npy/.npz fallback."""
    path = str(path)
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise ValueError(f"expected 3D volume, got {volume.ndim}D")
    if path.endswith(".npy"):
        np.save(path, volume)
        return
    if path.endswith(".npz"):
        np.savez(path, volume=volume, spacing=np.asarray(spacing, dtype=np.float64))
        return
    dtype = np.dtype(volume.dtype)
    if dtype not in _CODES:
        volume = volume.astype(np.float32)
        dtype = np.dtype(np.float32)
    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    dim = (3,) + volume.shape + (1, 1, 1, 1)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, _CODES[dtype])
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)  # bitpix
    pixdim = (1.0,) + tuple(spacing) + (1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    hdr[344:348] = _MAGIC
    payload = volume.astype(dtype.newbyteorder("<")).tobytes(order="F")
    with _open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * 4)  # extension flag
        fh.write(payload)


VOLUME_SUFFIXES = (".nii", ".nii.gz", ".npy", ".npz")


def find_volume(directory, stem: str) -> str | None:
    """Locate `<stem>` with any supported volume suffix in a directory."""
    for suffix in VOLUME_SUFFIXES:
        candidate = os.path.join(directory, stem + suffix)
        if os.path.exists(candidate):
            return candidate
    return None
