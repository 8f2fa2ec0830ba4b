"""Minimal NIfTI-1 reader/writer (.nii / .nii.gz).

Little-endian single-file NIfTI-1 only: 348-byte header, vox_offset 352,
no extensions. Orientation is taken from the sform when sform_code > 0,
else from the qform, else from pixdim with identity direction; the chosen
path is reported in :class:`LoadReport`. Voxel data is converted to the
internal carrier type (float32 for images, uint8 for labels) after
applying scl_slope / scl_inter when set.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cbctsim.errors import FormatError, ShapeError, UnsupportedFormatError
from cbctsim.volume import GridSpec, LabelVolume, Volume3

HEADER_SIZE = 348
VOX_OFFSET = 352

# NIfTI-1 datatype code -> numpy dtype (little-endian)
_DTYPES = {
    2: np.dtype("<u1"),   # uint8
    4: np.dtype("<i2"),   # int16
    8: np.dtype("<i4"),   # int32
    16: np.dtype("<f4"),  # float32
    64: np.dtype("<f8"),  # float64
}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


@dataclass(frozen=True)
class LoadReport:
    """How a file was interpreted during loading."""

    orientation_source: str   # "sform" | "qform" | "pixdim"
    datatype: str
    scaling_applied: bool


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _quaternion_to_direction(b, c, d, qfac):
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a2, 0.0))
    r = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ])
    if qfac < 0:
        r[:, 2] *= -1.0
    return r


def _split_affine(affine3x4):
    """Factor a 3x4 voxel->world map into spacing, direction, origin."""
    m = affine3x4[:, :3]
    spacing = np.linalg.norm(m, axis=0)
    if np.any(spacing <= 0):
        raise FormatError("sform has a zero-length column")
    direction = m / spacing
    origin = affine3x4[:, 3]
    return spacing, direction, origin


def read_nifti_with_report(path, as_labels: bool | None = None):
    """Load a NIfTI-1 file; returns (volume, LoadReport).

    ``as_labels`` forces the carrier type; by default uint8 files whose
    values are confined to {0, 1, 2} load as LabelVolume.
    """
    path = Path(path)
    with _open_maybe_gzip(path) as f:
        raw = f.read()
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")

    sizeof_hdr = struct.unpack_from("<i", raw, 0)[0]
    if sizeof_hdr != HEADER_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
            raise UnsupportedFormatError(f"{path}: big-endian NIfTI is not supported")
        raise FormatError(f"{path}: bad sizeof_hdr {sizeof_hdr} (expected {HEADER_SIZE})")
    magic = struct.unpack_from("4s", raw, 344)[0]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError(f"{path}: bad magic {magic!r}")
    if magic == b"ni1\x00":
        raise UnsupportedFormatError(f"{path}: two-file (.hdr/.img) NIfTI is not supported")

    dim = struct.unpack_from("<8h", raw, 40)
    datatype, bitpix = struct.unpack_from("<2h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset = struct.unpack_from("<f", raw, 108)[0]
    scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)
    qform_code, sform_code = struct.unpack_from("<2h", raw, 252)
    quatern = struct.unpack_from("<3f", raw, 256)
    qoffset = struct.unpack_from("<3f", raw, 268)
    srow = np.array(struct.unpack_from("<12f", raw, 280), dtype=np.float64).reshape(3, 4)

    ndim = dim[0]
    if ndim < 1 or ndim > 7:
        raise FormatError(f"{path}: bad dim[0]={ndim}")
    shape = [max(1, dim[i]) for i in range(1, ndim + 1)]
    if len(shape) < 3 or any(s != 1 for s in shape[3:]):
        raise ShapeError(f"{path}: expected a 3-D volume, got shape {tuple(shape)}")
    nx, ny, nz = shape[:3]

    if datatype not in _DTYPES:
        raise UnsupportedFormatError(f"{path}: unsupported datatype code {datatype}")
    dtype = _DTYPES[datatype]
    if bitpix != dtype.itemsize * 8:
        raise FormatError(f"{path}: bitpix {bitpix} inconsistent with datatype {datatype}")

    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else VOX_OFFSET
    count = nx * ny * nz
    payload = raw[offset:offset + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise FormatError(f"{path}: truncated voxel data")
    values = np.frombuffer(payload, dtype=dtype)
    data = values.reshape((nx, ny, nz), order="F")

    if sform_code > 0:
        spacing, direction, origin = _split_affine(srow)
        source = "sform"
    elif qform_code > 0:
        spacing = np.abs(np.asarray(pixdim[1:4], dtype=np.float64))
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        direction = _quaternion_to_direction(*quatern, qfac)
        origin = np.asarray(qoffset, dtype=np.float64)
        source = "qform"
    else:
        spacing = np.abs(np.asarray(pixdim[1:4], dtype=np.float64))
        direction = np.eye(3)
        origin = np.zeros(3)
        source = "pixdim"
    if np.any(spacing <= 0):
        raise FormatError(f"{path}: non-positive pixdim {tuple(spacing)}")

    scale = bool(scl_slope != 0.0 and (scl_slope != 1.0 or scl_inter != 0.0))
    report = LoadReport(source, dtype.base.name, scale)

    if as_labels is None:
        as_labels = datatype == 2 and not scale and data.max(initial=0) <= 2

    grid = GridSpec((nx, ny, nz), tuple(spacing), tuple(origin), direction)
    if as_labels:
        if scale:
            raise UnsupportedFormatError(f"{path}: scl scaling on a label volume")
        return LabelVolume(data.astype(np.uint8), grid), report
    out = data.astype(np.float32)
    if scale:
        out = out * np.float32(scl_slope) + np.float32(scl_inter)
    return Volume3(out, grid), report


def read_nifti(path, as_labels: bool | None = None):
    """Load a NIfTI-1 file as Volume3 or LabelVolume."""
    vol, _ = read_nifti_with_report(path, as_labels=as_labels)
    return vol


def _build_header(shape, spacing, affine3x4, datatype_code, dtype):
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dim = [len(shape)] + list(shape) + [1] * (7 - len(shape))
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<2h", hdr, 70, datatype_code, dtype.itemsize * 8)
    pixdim = [1.0] + list(spacing) + [0.0] * (7 - len(spacing))
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<10s", hdr, 148, b"cbctsim")  # descrip prefix
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform_code=0, sform_code=1
    struct.pack_into("<12f", hdr, 280, *affine3x4.reshape(12).tolist())
    struct.pack_into("4s", hdr, 344, b"n+1\x00")
    return bytes(hdr)


def _write_blob(path, blob: bytes, gzip_compress: bool):
    path = Path(path)
    if gzip_compress:
        with open(path, "wb") as f:
            # empty filename + mtime=0 keep repeated runs byte-identical
            with gzip.GzipFile(filename="", fileobj=f, mode="wb", mtime=0) as gz:
                gz.write(blob)
    else:
        with open(path, "wb") as f:
            f.write(blob)


def write_nifti(volume, path, gzip_compress: bool | None = None, dtype=None) -> None:
    """Write a Volume3 or LabelVolume as single-file NIfTI-1.

    Compression defaults to on for paths ending in .gz. ``dtype`` overrides
    the on-disk datatype (uint8, int16, int32, float32 or float64); values
    are cast without scaling.
    """
    path = Path(path)
    if gzip_compress is None:
        gzip_compress = path.suffix == ".gz"
    if dtype is None:
        dtype = np.uint8 if isinstance(volume, LabelVolume) else np.float32
    dtype = np.dtype(dtype).newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise UnsupportedFormatError(f"unsupported on-disk dtype {dtype}")
    code = _DTYPE_CODES[dtype]

    affine3x4 = volume.affine[:3, :].astype(np.float32)
    hdr = _build_header(volume.dims, volume.spacing, affine3x4, code, dtype)
    payload = volume.data.astype(dtype).ravel(order="F").tobytes()
    blob = hdr + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + payload
    _write_blob(path, blob, gzip_compress)


def read_nifti_nd(path):
    """Load any supported NIfTI-1 file as (ndarray, spacing, affine3x4).

    Used for non-volume payloads (vector fields); no carrier conversion.
    """
    path = Path(path)
    with _open_maybe_gzip(path) as f:
        raw = f.read()
    if struct.unpack_from("<i", raw, 0)[0] != HEADER_SIZE:
        raise FormatError(f"{path}: bad sizeof_hdr")
    dim = struct.unpack_from("<8h", raw, 40)
    datatype = struct.unpack_from("<h", raw, 70)[0]
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset = struct.unpack_from("<f", raw, 108)[0]
    srow = np.array(struct.unpack_from("<12f", raw, 280), dtype=np.float64).reshape(3, 4)
    if datatype not in _DTYPES:
        raise UnsupportedFormatError(f"{path}: unsupported datatype code {datatype}")
    dtype = _DTYPES[datatype]
    shape = tuple(max(1, dim[i]) for i in range(1, dim[0] + 1))
    count = int(np.prod(shape))
    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else VOX_OFFSET
    data = np.frombuffer(raw[offset:offset + count * dtype.itemsize], dtype=dtype)
    if data.size != count:
        raise FormatError(f"{path}: truncated voxel data")
    return data.reshape(shape, order="F"), tuple(pixdim[1:4]), srow


def write_nifti_nd(data: np.ndarray, spacing, affine3x4, path,
                   gzip_compress: bool | None = None) -> None:
    """Write an n-D array (e.g. a 5-D vector field) as NIfTI-1."""
    path = Path(path)
    if gzip_compress is None:
        gzip_compress = path.suffix == ".gz"
    dtype = np.dtype(data.dtype).newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise UnsupportedFormatError(f"unsupported on-disk dtype {dtype}")
    spacing3 = (list(spacing) + [1.0, 1.0, 1.0])[:3]
    hdr = _build_header(data.shape, spacing3, np.asarray(affine3x4, dtype=np.float32),
                        _DTYPE_CODES[dtype], dtype)
    blob = hdr + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + data.astype(dtype).ravel(order="F").tobytes()
    _write_blob(path, blob, gzip_compress)
