"""Small builders shared across test modules."""

import struct

import numpy as np

from apl.nifti import ImageVolume, LabelVolume, VolumeGeometry


def geometry(dims, spacing=(1.0, 1.0, 1.0)):
    return VolumeGeometry.from_spacing(dims, spacing)


def label_volume(arr, spacing=(1.0, 1.0, 1.0), palette=None):
    arr = np.asarray(arr)
    return LabelVolume(geometry(arr.shape, spacing), arr, palette=palette or {})


def image_volume(arr, spacing=(1.0, 1.0, 1.0)):
    arr = np.asarray(arr)
    return ImageVolume(geometry(arr.shape, spacing), arr)


def raw_nifti(dims=(2, 2, 2), datatype=16, pixdim=(1.0, 1.0, 1.0), payload=None,
              sform=None, qform=None, scl=(1.0, 0.0), endian="<", magic=b"n+1\x00",
              vox_offset=352.0, qfac=1.0):
    """Hand-build a single-file NIfTI-1 byte blob, independent of the writer."""
    sizes = {2: 1, 4: 2, 8: 4, 16: 4, 64: 8, 128: 3}
    np_types = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64}
    hdr = bytearray(348)
    struct.pack_into(endian + "i", hdr, 0, 348)
    struct.pack_into(endian + "8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into(endian + "h", hdr, 70, datatype)
    struct.pack_into(endian + "h", hdr, 72, sizes[datatype] * 8)
    struct.pack_into(endian + "8f", hdr, 76, qfac, pixdim[0], pixdim[1], pixdim[2],
                     0, 0, 0, 0)
    struct.pack_into(endian + "f", hdr, 108, vox_offset)
    struct.pack_into(endian + "2f", hdr, 112, scl[0], scl[1])
    if qform is not None:
        struct.pack_into(endian + "h", hdr, 252, 1)
        struct.pack_into(endian + "6f", hdr, 256, *qform)
    if sform is not None:
        struct.pack_into(endian + "h", hdr, 254, 1)
        struct.pack_into(endian + "12f", hdr, 280, *np.asarray(sform)[:3, :].ravel())
    struct.pack_into("4s", hdr, 344, magic)
    if payload is None:
        payload = np.zeros(dims, dtype=np_types[datatype])
    raw = np.asarray(payload, dtype=np_types.get(datatype, np.uint8))
    raw = raw.astype(raw.dtype.newbyteorder(endian))
    pad = b"\x00" * (int(vox_offset) - 348)
    return bytes(hdr) + pad + raw.tobytes(order="F")
