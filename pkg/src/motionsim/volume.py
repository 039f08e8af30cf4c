"""3D volume container, minimal NIfTI-1 I/O and deterministic preprocessing.

Only the NIfTI-1 subset needed for registered T1w research data is
supported: single 3D volume, little-endian, datatypes uint8/int16/
float32/float64, optional gzip. The sform affine is preferred, then the
qform, then a diagonal built from pixdim.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

HEADER_SIZE = 348
MAGIC = b"n+1\x00"

# NIfTI-1 datatype codes we accept
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    16: np.float32,
    64: np.float64,
}


class NiftiFormatError(ValueError):
    """Raised for malformed or unsupported NIfTI input."""


@dataclass(frozen=True)
class Volume3D:
    """Dense 3D scalar grid with voxel spacing and a voxel-to-world affine.

    ``data`` is float32, indexed [x, y, z]. Instances are immutable;
    every operation returns a new volume.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"expected 3D data, got shape {data.shape}")
        if any(d < 1 for d in data.shape):
            raise ValueError(f"all dims must be >= 1, got {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        affine = np.asarray(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")
        data.flags.writeable = False
        affine.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def dims(self):
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Volume3D":
        """New volume sharing this volume's spacing and affine."""
        return Volume3D(data, self.spacing, self.affine)

    def center_world(self) -> np.ndarray:
        """World coordinates (mm) of the geometric center of the grid."""
        c = (np.array(self.dims, dtype=np.float64) - 1.0) / 2.0
        return (self.affine @ np.append(c, 1.0))[:3]


def _read_raw(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_nifti(path) -> Volume3D:
    """Read a NIfTI-1 file (optionally gzipped) into a Volume3D.

    scl_slope/scl_inter are applied when slope != 0. Non-finite voxels
    are replaced with zero so downstream code never sees NaN/Inf.
    """
    raw = _read_raw(path)
    if len(raw) < HEADER_SIZE:
        raise NiftiFormatError(f"file too small for a NIfTI-1 header: {len(raw)} bytes")

    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise NiftiFormatError(f"malformed header: sizeof_hdr={sizeof_hdr}, expected 348")

    dim = struct.unpack_from("<8h", raw, 40)
    datatype, _bitpix = struct.unpack_from("<2h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)
    qform_code, sform_code = struct.unpack_from("<2h", raw, 252)

    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiFormatError(f"invalid dim[0]={ndim}")
    shape = list(dim[1 : 1 + ndim])
    while len(shape) > 3 and shape[-1] == 1:
        shape.pop()
    if len(shape) != 3:
        raise NiftiFormatError(f"expected a 3D volume, got shape {tuple(dim[1:1 + ndim])}")

    if datatype not in _DTYPES:
        raise NiftiFormatError(f"unsupported datatype code {datatype}")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder("<")

    n_vox = int(np.prod(shape))
    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else 352
    need = offset + n_vox * dtype.itemsize
    if len(raw) < need:
        raise NiftiFormatError(f"truncated payload: have {len(raw)} bytes, need {need}")

    flat = np.frombuffer(raw, dtype=dtype, count=n_vox, offset=offset)
    data = flat.reshape(shape, order="F").astype(np.float32)
    if scl_slope != 0.0:
        data = data * np.float32(scl_slope) + np.float32(scl_inter)
    data = np.nan_to_num(data, nan=0.0, posinf=0.0, neginf=0.0)

    spacing = tuple(abs(p) if p != 0 else 1.0 for p in pixdim[1:4])
    if sform_code > 0:
        srow = struct.unpack_from("<12f", raw, 280)
        affine = np.eye(4)
        affine[0, :] = srow[0:4]
        affine[1, :] = srow[4:8]
        affine[2, :] = srow[8:12]
    elif qform_code > 0:
        affine = _qform_affine(raw, spacing)
    else:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])

    return Volume3D(data, spacing, affine)


def _qform_affine(raw: bytes, spacing) -> np.ndarray:
    b, c, d = struct.unpack_from("<3f", raw, 256)
    qx, qy, qz = struct.unpack_from("<3f", raw, 268)
    (qfac,) = struct.unpack_from("<f", raw, 76)  # pixdim[0]
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a2, 0.0))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    qfac = -1.0 if qfac < 0 else 1.0
    affine = np.eye(4)
    affine[:3, :3] = rot * np.array([spacing[0], spacing[1], qfac * spacing[2]])
    affine[:3, 3] = (qx, qy, qz)
    return affine


def write_nifti(v: Volume3D, path) -> None:
    """Write a Volume3D as little-endian float32 NIfTI-1 (gzip if *.gz)."""
    path = str(path)
    if not path:
        raise ValueError("empty output path")
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dims = v.dims
    struct.pack_into("<8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, 16, 32)  # float32, 32 bits
    struct.pack_into("<8f", hdr, 76, 1.0, v.spacing[0], v.spacing[1], v.spacing[2], 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform off, sform on
    aff = v.affine
    struct.pack_into("<12f", hdr, 280, *aff[0, :], *aff[1, :], *aff[2, :])
    hdr[344:348] = MAGIC

    payload = np.asfortranarray(v.data.astype("<f4")).tobytes(order="F")
    blob = bytes(hdr) + b"\x00" * 4 + payload
    if path.endswith(".gz"):
        with gzip.open(path, "wb") as f:
            f.write(blob)
    else:
        with open(path, "wb") as f:
            f.write(blob)


def center_crop(v: Volume3D, roi) -> Volume3D:
    """Crop (or zero-pad) to the requested ROI, centered.

    Odd crop remainders leave the extra voxel on the high-index side;
    undersized axes are symmetrically zero-padded.
    """
    roi = tuple(int(r) for r in roi)
    if any(r < 1 for r in roi):
        raise ValueError(f"roi components must be >= 1, got {roi}")
    out = np.zeros(roi, dtype=np.float32)
    src_slices, dst_slices = [], []
    for axis in range(3):
        n, r = v.dims[axis], roi[axis]
        if n >= r:
            lo = (n - r) // 2
            src_slices.append(slice(lo, lo + r))
            dst_slices.append(slice(0, r))
        else:
            lo = (r - n) // 2
            src_slices.append(slice(0, n))
            dst_slices.append(slice(lo, lo + n))
    out[tuple(dst_slices)] = v.data[tuple(src_slices)]
    return Volume3D(out, v.spacing, v.affine)


def minmax_scale(v: Volume3D) -> Volume3D:
    """Rescale intensities to [0, 1]; constant volumes map to zeros."""
    lo = float(v.data.min())
    hi = float(v.data.max())
    if hi == lo:
        return v.with_data(np.zeros_like(v.data))
    return v.with_data((v.data - lo) / (hi - lo))


def flip_sagittal(v: Volume3D) -> Volume3D:
    """Reverse the volume along axis 0 (left-right for registered data)."""
    return v.with_data(v.data[::-1, :, :].copy())
