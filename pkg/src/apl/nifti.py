"""NIfTI-1 volume reader/writer and geometry bookkeeping.

Hand-rolled binary parser: 348-byte header parsed field-by-field at fixed
offsets, little- or big-endian (sniffed via dim[0]), with optional gzip
container detected by magic bytes rather than file extension. Only the
single-file layout ("n+1" magic) and datatypes uint8/int16/int32/float32/
float64 are supported; NIfTI-2, RGB types and two-file pairs are rejected.

Voxel data is kept as a numpy array of shape (nx, ny, nz) whose flat
x-fastest order matches the on-disk layout. Axial slicing always walks the
k-index axis (``axial_axis``, default 2); orientation is carried in the
affine but never used to resample.
"""

from __future__ import annotations

import gzip
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BoundsError,
    CorruptFileError,
    FormatError,
    GeometryError,
    UnsupportedError,
    WriteError,
)

HEADER_SIZE = 348
GZIP_MAGIC = b"\x1f\x8b"
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# NIfTI-1 datatype codes we accept.
DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
DTYPE_CODES = {v: k for k, v in DTYPES.items()}

# Header field offsets (byte positions in the 348-byte struct).
_OFF_DIM = 40          # short[8]
_OFF_DATATYPE = 70     # short
_OFF_BITPIX = 72       # short
_OFF_PIXDIM = 76       # float[8]
_OFF_VOX_OFFSET = 108  # float
_OFF_SCL_SLOPE = 112   # float
_OFF_SCL_INTER = 116   # float
_OFF_QFORM_CODE = 252  # short
_OFF_SFORM_CODE = 254  # short
_OFF_QUATERN = 256     # float[6]: quatern_b,c,d + qoffset_x,y,z
_OFF_SROW = 280        # float[12]: srow_x, srow_y, srow_z
_OFF_MAGIC = 344       # char[4]


@dataclass(frozen=True, eq=False)
class VolumeGeometry:
    """Grid dimensions, voxel spacing (mm) and index->mm affine."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    affine: np.ndarray  # 4x4, last row (0,0,0,1)
    axial_axis: int = 2

    def __post_init__(self):
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise GeometryError(f"dims must be three positive integers, got {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise GeometryError(f"spacing must be positive, got {self.spacing}")
        aff = np.asarray(self.affine, dtype=np.float64)
        if aff.shape != (4, 4):
            raise GeometryError("affine must be 4x4")
        if not np.allclose(aff[3], [0.0, 0.0, 0.0, 1.0]):
            raise GeometryError("affine last row must be (0,0,0,1)")
        if self.axial_axis not in (0, 1, 2):
            raise GeometryError(f"axial_axis must be 0..2, got {self.axial_axis}")
        aff.setflags(write=False)
        object.__setattr__(self, "affine", aff)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def same_grid(self, other: "VolumeGeometry") -> bool:
        return self.dims == other.dims

    def voxel_to_mm(self, ijk) -> np.ndarray:
        """Map one voxel index (i,j,k) to physical mm coordinates."""
        v = np.array([ijk[0], ijk[1], ijk[2], 1.0])
        return (self.affine @ v)[:3]

    @classmethod
    def from_spacing(cls, dims, spacing, axial_axis: int = 2) -> "VolumeGeometry":
        aff = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
        return cls(tuple(dims), tuple(spacing), aff, axial_axis)


def _freeze(arr: np.ndarray) -> np.ndarray:
    """Private immutable copy; never mutates the caller's array flags."""
    if arr.flags.writeable:
        arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(eq=False)
class ImageVolume:
    """Scalar intensity volume. Immutable after construction."""

    geometry: VolumeGeometry
    data: np.ndarray  # shape (nx, ny, nz)
    value_range: tuple[float, float] = field(init=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.geometry.dims:
            raise GeometryError(
                f"data shape {data.shape} does not match dims {self.geometry.dims}")
        self.data = _freeze(data)
        self.value_range = (float(data.min()), float(data.max()))

    @property
    def samples(self) -> np.ndarray:
        """Flat view in the on-disk x-fastest order."""
        return self.data.ravel(order="F")


@dataclass(eq=False)
class LabelVolume:
    """Integer label volume sharing the image grid (masks, annotations)."""

    geometry: VolumeGeometry
    data: np.ndarray
    palette: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.geometry.dims:
            raise GeometryError(
                f"data shape {data.shape} does not match dims {self.geometry.dims}")
        if not np.issubdtype(data.dtype, np.integer):
            raise GeometryError(f"labels must be integers, got {data.dtype}")
        if data.size and data.min() < 0:
            raise GeometryError("labels must be non-negative")
        present = self.occurring_labels(data)
        if not self.palette:
            self.palette = {int(v): f"label_{int(v)}" for v in present}
        else:
            missing = [int(v) for v in present if int(v) not in self.palette]
            if missing:
                raise GeometryError(f"labels {missing} missing from palette")
        self.data = _freeze(data)

    @staticmethod
    def occurring_labels(data: np.ndarray) -> list[int]:
        return [int(v) for v in np.unique(data)]

    @property
    def samples(self) -> np.ndarray:
        return self.data.ravel(order="F")

    def counts(self) -> dict[int, int]:
        values, counts = np.unique(self.data, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


def _sniff_gzip(raw: bytes) -> bytes:
    if raw[:2] == GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise CorruptFileError(f"gzip container damaged: {exc}") from exc
    return raw


def _detect_endianness(buf: bytes) -> str:
    """dim[0] must land in [1,7] under exactly one byte order."""
    (dim0_le,) = struct.unpack_from("<h", buf, _OFF_DIM)
    if 1 <= dim0_le <= 7:
        return "<"
    (dim0_be,) = struct.unpack_from(">h", buf, _OFF_DIM)
    if 1 <= dim0_be <= 7:
        return ">"
    raise FormatError(f"dim[0] = {dim0_le} invalid in either byte order; not NIfTI-1")


def _quaternion_affine(bq, cq, dq, ox, oy, oz, spacing, qfac) -> np.ndarray:
    a2 = 1.0 - (bq * bq + cq * cq + dq * dq)
    aq = math.sqrt(a2) if a2 > 0 else 0.0
    r = np.array([
        [aq * aq + bq * bq - cq * cq - dq * dq, 2 * (bq * cq - aq * dq), 2 * (bq * dq + aq * cq)],
        [2 * (bq * cq + aq * dq), aq * aq + cq * cq - bq * bq - dq * dq, 2 * (cq * dq - aq * bq)],
        [2 * (bq * dq - aq * cq), 2 * (cq * dq + aq * bq), aq * aq + dq * dq - bq * bq - cq * cq],
    ])
    aff = np.eye(4)
    aff[:3, 0] = r[:, 0] * spacing[0]
    aff[:3, 1] = r[:, 1] * spacing[1]
    aff[:3, 2] = r[:, 2] * spacing[2] * qfac
    aff[:3, 3] = (ox, oy, oz)
    return aff


def read_volume(path, as_labels: bool | None = None, axial_axis: int = 2):
    """Parse a NIfTI-1 file into an ImageVolume or LabelVolume.

    ``as_labels=None`` picks LabelVolume for unscaled uint8 payloads (the
    convention this package writes label maps with) and ImageVolume
    otherwise; pass True/False to force.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    buf = _sniff_gzip(raw)
    if len(buf) < HEADER_SIZE:
        raise CorruptFileError(f"{path}: {len(buf)} bytes is shorter than a NIfTI-1 header")

    magic = buf[_OFF_MAGIC:_OFF_MAGIC + 4]
    if magic == MAGIC_PAIR:
        raise UnsupportedError(f"{path}: two-file NIfTI pairs (.hdr/.img) not supported")
    if magic != MAGIC_SINGLE:
        raise FormatError(f"{path}: magic {magic!r} is not 'n+1'")

    end = _detect_endianness(buf)
    dim = struct.unpack_from(end + "8h", buf, _OFF_DIM)
    (datatype,) = struct.unpack_from(end + "h", buf, _OFF_DATATYPE)
    pixdim = struct.unpack_from(end + "8f", buf, _OFF_PIXDIM)
    (vox_offset_f,) = struct.unpack_from(end + "f", buf, _OFF_VOX_OFFSET)
    (scl_slope,) = struct.unpack_from(end + "f", buf, _OFF_SCL_SLOPE)
    (scl_inter,) = struct.unpack_from(end + "f", buf, _OFF_SCL_INTER)
    (qform_code,) = struct.unpack_from(end + "h", buf, _OFF_QFORM_CODE)
    (sform_code,) = struct.unpack_from(end + "h", buf, _OFF_SFORM_CODE)

    if datatype not in DTYPES:
        raise UnsupportedError(f"{path}: datatype code {datatype} not in {sorted(DTYPES)}")
    dtype = DTYPES[datatype]

    ndim = dim[0]
    shape = [max(1, dim[i]) if i <= ndim else 1 for i in range(1, 8)]
    nx, ny, nz = shape[0], shape[1], shape[2]
    if any(s != 1 for s in shape[3:]):
        raise UnsupportedError(f"{path}: more than 3 non-singleton dimensions {tuple(shape)}")

    spacing = tuple(abs(pixdim[i]) if pixdim[i] != 0 else 1.0 for i in (1, 2, 3))

    vox_offset = int(round(vox_offset_f))
    if vox_offset < HEADER_SIZE:
        raise CorruptFileError(f"{path}: vox_offset {vox_offset} < {HEADER_SIZE}")
    n_voxels = nx * ny * nz
    need = vox_offset + n_voxels * dtype.itemsize
    if len(buf) < need:
        raise CorruptFileError(
            f"{path}: payload truncated ({len(buf)} bytes, need {need})")

    arr = np.frombuffer(buf, dtype=dtype.newbyteorder(end), count=n_voxels,
                        offset=vox_offset)
    arr = np.asarray(arr, dtype=dtype)  # normalize to native byte order
    arr = arr.reshape((nx, ny, nz), order="F")

    if sform_code > 0:
        srow = struct.unpack_from(end + "12f", buf, _OFF_SROW)
        affine = np.vstack([np.array(srow).reshape(3, 4), [0.0, 0.0, 0.0, 1.0]])
    elif qform_code > 0:
        quat = struct.unpack_from(end + "6f", buf, _OFF_QUATERN)
        qfac = -1.0 if pixdim[0] == -1.0 else 1.0
        affine = _quaternion_affine(*quat, spacing, qfac)
    else:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])

    geometry = VolumeGeometry((nx, ny, nz), spacing, affine, axial_axis)

    # slope 0 means "no scaling stored": neither slope nor intercept applies
    scaled = scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0)
    slope = scl_slope if scaled else 1.0

    if as_labels is None:
        as_labels = dtype == np.uint8 and not scaled
    if as_labels:
        if scaled:
            raise UnsupportedError(f"{path}: scl scaling on a label volume")
        if not np.issubdtype(dtype, np.integer):
            raise UnsupportedError(f"{path}: float datatype cannot hold labels")
        return LabelVolume(geometry, arr)

    if scaled:
        out_dtype = np.float64 if dtype == np.float64 else np.float32
        arr = (arr.astype(np.float64) * slope + scl_inter).astype(out_dtype)
    return ImageVolume(geometry, arr)


def read_image(path, axial_axis: int = 2) -> ImageVolume:
    return read_volume(path, as_labels=False, axial_axis=axial_axis)


def read_labels(path, axial_axis: int = 2) -> LabelVolume:
    return read_volume(path, as_labels=True, axial_axis=axial_axis)


def _choose_dtype(vol) -> np.dtype:
    if isinstance(vol, LabelVolume):
        top = int(vol.data.max()) if vol.data.size else 0
        if top <= 255:
            return np.dtype(np.uint8)
        if top < 2 ** 15:
            return np.dtype(np.int16)
        return np.dtype(np.int32)
    # Images keep their dtype when it is representable, else float32.
    if vol.data.dtype in DTYPE_CODES:
        return vol.data.dtype
    return np.dtype(np.float32)


def write_volume(vol, path) -> None:
    """Serialize to single-file NIfTI-1; gzip when the name ends in .gz.

    The written file reconstructs exactly under :func:`read_volume`:
    spacing goes to pixdim, the affine to sform rows (sform_code 1),
    scl_slope/inter to the neutral 1/0.
    """
    path = Path(path)
    geo = vol.geometry
    dtype = _choose_dtype(vol)
    payload = vol.data.astype(dtype.newbyteorder("<"))

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")  # regular, historical
    nx, ny, nz = geo.dims
    struct.pack_into("<8h", hdr, _OFF_DIM, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, _OFF_DATATYPE, DTYPE_CODES[dtype])
    struct.pack_into("<h", hdr, _OFF_BITPIX, dtype.itemsize * 8)
    sx, sy, sz = geo.spacing
    struct.pack_into("<8f", hdr, _OFF_PIXDIM, 0.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, _OFF_VOX_OFFSET, float(HEADER_SIZE + 4))
    struct.pack_into("<f", hdr, _OFF_SCL_SLOPE, 1.0)
    struct.pack_into("<f", hdr, _OFF_SCL_INTER, 0.0)
    struct.pack_into("<h", hdr, _OFF_QFORM_CODE, 0)
    struct.pack_into("<h", hdr, _OFF_SFORM_CODE, 1)
    srow = np.asarray(geo.affine[:3, :], dtype=np.float64).ravel()
    struct.pack_into("<12f", hdr, _OFF_SROW, *srow)
    struct.pack_into("<4s", hdr, _OFF_MAGIC, MAGIC_SINGLE)

    blob = bytes(hdr) + b"\x00\x00\x00\x00" + payload.tobytes(order="F")
    if path.name.endswith(".gz"):
        out = _gzip_deterministic(blob)
    else:
        out = blob
    try:
        fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".part")
        with os.fdopen(fd, "wb") as fh:
            fh.write(out)
        os.replace(tmp, path)
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc


def _gzip_deterministic(blob: bytes) -> bytes:
    import io

    bio = io.BytesIO()
    with gzip.GzipFile(fileobj=bio, mode="wb", mtime=0) as gz:
        gz.write(blob)
    return bio.getvalue()


def extract_axial_slice(vol, z: int) -> np.ndarray:
    """Return a writable copy of the in-plane grid at axial index z."""
    axis = vol.geometry.axial_axis
    nz = vol.geometry.dims[axis]
    if not 0 <= z < nz:
        raise BoundsError(f"slice {z} outside [0, {nz})")
    plane = np.take(vol.data, z, axis=axis)
    return np.array(plane)  # decouple from the volume buffer
