"""NIfTI-1 reading and writing.

Single-file layout only (.nii / .nii.gz): 348-byte header, 4-byte extender,
voxel payload at vox_offset. Reading accepts either endianness and the four
scalar integer/float datatypes; writing always emits little-endian float32
with the affine stored in the sform.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

from .errors import BadMagic, TruncatedFile, UnsupportedDatatype
from .volume import Volume

_HDR_FMT = (
    "i 10s 18s i h c c 8h 3f hhhh 8f fff h c c ffff ii 80s 24s hh 6f 12f 16s 4s"
)
_HDR_SIZE = 348
_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4"}
_GZ_MAGIC = b"\x1f\x8b"


def _quat_to_affine(b, c, d, qfac, spacing, offsets):
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a2, 0.0))
    r = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    sx, sy, sz = spacing
    aff = np.eye(4)
    aff[:3, :3] = r @ np.diag([sx, sy, sz * (qfac if qfac != 0 else 1.0)])
    aff[:3, 3] = offsets
    return aff


def nifti_read(raw: bytes) -> Volume:
    """Parse NIfTI-1 bytes (optionally gzipped) into a Volume.

    Affine priority: sform when sform_code > 0, else qform when
    qform_code > 0, else a diagonal built from pixdim. Intensities are
    rescaled by scl_slope/scl_inter when scl_slope is neither 0 nor the
    identity pair (1, 0); the identity case is skipped so float32 voxels
    survive a round trip bit-exactly.
    """
    if raw[:2] == _GZ_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise TruncatedFile(f"bad gzip stream: {e}") from e
    if len(raw) < 4:
        raise BadMagic("file too short to be NIfTI-1")
    if struct.unpack("<i", raw[:4])[0] == _HDR_SIZE:
        en = "<"
    elif struct.unpack(">i", raw[:4])[0] == _HDR_SIZE:
        en = ">"
    else:
        raise BadMagic("sizeof_hdr is not 348; not a NIfTI-1 file")
    if len(raw) < _HDR_SIZE:
        raise TruncatedFile(f"header needs 348 bytes, got {len(raw)}")
    fields = struct.unpack(en + _HDR_FMT, raw[:_HDR_SIZE])
    magic = fields[-1]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise BadMagic(f"magic {magic!r}")
    dim = fields[7:15]
    datatype = fields[19]
    pixdim = fields[22:30]
    vox_offset = int(fields[30])
    scl_slope, scl_inter = fields[31], fields[32]
    qform_code = fields[44]
    sform_code = fields[45]
    quat = fields[46:52]
    srow = fields[52:64]

    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"datatype code {datatype}")
    nx, ny, nz = (max(int(d), 1) for d in dim[1:4])
    dt = np.dtype(en + _DTYPES[datatype])
    need = nx * ny * nz * dt.itemsize
    if vox_offset < _HDR_SIZE:
        vox_offset = _HDR_SIZE
    if len(raw) < vox_offset + need:
        raise TruncatedFile(
            f"payload needs {vox_offset + need} bytes, file has {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype=dt, count=nx * ny * nz, offset=vox_offset)
    data = flat.reshape((nx, ny, nz), order="F").astype(np.float32)
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        data = data * np.float32(scl_slope) + np.float32(scl_inter)

    spacing = tuple(float(p) if np.isfinite(p) and p > 0 else 1.0 for p in pixdim[1:4])
    if sform_code > 0:
        affine = np.array(
            [srow[0:4], srow[4:8], srow[8:12], (0.0, 0.0, 0.0, 1.0)], dtype=np.float64
        )
    elif qform_code > 0:
        qfac = float(pixdim[0])
        affine = _quat_to_affine(quat[0], quat[1], quat[2], qfac, spacing, quat[3:6])
    else:
        affine = None  # Volume fills in diag(spacing)
    return Volume(data, spacing=spacing, affine=affine)


def nifti_write(v: Volume, gz: bool = False) -> bytes:
    """Serialize a Volume as little-endian float32 NIfTI-1 bytes.

    vox_offset 352 (header + empty extender), sform_code 1 carrying the
    affine, qform_code 0. Gzip output is deterministic (mtime pinned to 0)
    so identical volumes serialize to identical bytes.
    """
    nx, ny, nz = v.dims
    dim = (3, nx, ny, nz, 1, 1, 1, 1)
    pixdim = (0.0, *v.spacing, 0.0, 0.0, 0.0, 0.0)
    srow = tuple(float(x) for x in v.affine[:3].ravel())
    hdr = struct.pack(
        "<" + _HDR_FMT,
        _HDR_SIZE,
        b"",
        b"",
        0,
        0,
        b"\x00",
        b"\x00",
        *dim,
        0.0,
        0.0,
        0.0,
        0,
        16,  # float32
        32,
        0,
        *pixdim,
        352.0,
        1.0,
        0.0,  # scl identity
        0,
        b"\x00",
        b"\x02",  # spatial units mm
        0.0,
        0.0,
        0.0,
        0.0,
        0,
        0,
        b"",
        b"",
        0,  # qform_code
        1,  # sform_code
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        *srow,
        b"",
        b"n+1\x00",
    )
    payload = hdr + b"\x00" * 4 + np.ascontiguousarray(
        v.data.astype("<f4").ravel(order="F")
    ).tobytes()
    if gz:
        return gzip.compress(payload, compresslevel=6, mtime=0)
    return payload
