"""NIfTI-1 IO tests.

The reference header builder below is assembled field-by-field at explicit
byte offsets, independent of the production struct layout, so a mistake in
the reader cannot cancel against the same mistake in the writer.
"""

import gzip
import struct

import numpy as np
import pytest

from labelforge.errors import BadMagic, TruncatedFile, UnsupportedDatatype
from labelforge.nifti import nifti_read, nifti_write
from labelforge.volume import Volume


def reference_nifti(
    dims,
    payload,
    datatype=16,
    bitpix=32,
    pixdim=(1.0, 1.0, 1.0),
    scl=(0.0, 0.0),
    sform=None,
    qform=None,
    vox_offset=352,
    endian="<",
    magic=b"n+1\x00",
):
    """Build NIfTI-1 bytes by poking fields at their documented offsets."""
    hdr = bytearray(348)

    def put(off, fmt, *vals):
        struct.pack_into(endian + fmt, hdr, off, *vals)

    put(0, "i", 348)
    put(40, "8h", 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    put(70, "h", datatype)
    put(72, "h", bitpix)
    put(76, "8f", 1.0, pixdim[0], pixdim[1], pixdim[2], 0, 0, 0, 0)
    put(108, "f", float(vox_offset))
    put(112, "2f", scl[0], scl[1])
    if qform is not None:
        b, c, d, ox, oy, oz = qform
        put(252, "h", 1)
        put(256, "6f", b, c, d, ox, oy, oz)
    if sform is not None:
        put(254, "h", 1)
        put(280, "12f", *np.asarray(sform, dtype=float)[:3].ravel())
    put(344, "4s", magic)
    pad = b"\x00" * max(vox_offset - 348, 0)
    return bytes(hdr) + pad + payload


class TestRead:
    def test_reference_file_float32(self):
        payload = struct.pack("<8f", *range(8))
        raw = reference_nifti((2, 2, 2), payload)
        v = nifti_read(raw)
        assert v.dims == (2, 2, 2)
        # x-fastest: flat order F must give back 0..7
        assert np.array_equal(v.data.ravel(order="F"), np.arange(8, dtype=np.float32))

    def test_big_endian(self):
        payload = struct.pack(">8f", *range(8))
        raw = reference_nifti((2, 2, 2), payload, endian=">")
        v = nifti_read(raw)
        assert np.array_equal(v.data.ravel(order="F"), np.arange(8, dtype=np.float32))

    @pytest.mark.parametrize(
        "code,fmt,bits",
        [(2, "8B", 8), (4, "8h", 16), (8, "8i", 32)],
    )
    def test_integer_datatypes(self, code, fmt, bits):
        payload = struct.pack("<" + fmt, *range(8))
        raw = reference_nifti((2, 2, 2), payload, datatype=code, bitpix=bits)
        v = nifti_read(raw)
        assert v.data.dtype == np.float32
        assert np.array_equal(v.data.ravel(order="F"), np.arange(8, dtype=np.float32))

    def test_scl_scaling_applied(self):
        payload = struct.pack("<8B", *range(8))
        raw = reference_nifti((2, 2, 2), payload, datatype=2, bitpix=8, scl=(2.0, 10.0))
        v = nifti_read(raw)
        assert np.array_equal(
            v.data.ravel(order="F"), 2.0 * np.arange(8, dtype=np.float32) + 10.0
        )

    def test_scl_slope_zero_means_no_scaling(self):
        payload = struct.pack("<8B", *range(8))
        raw = reference_nifti((2, 2, 2), payload, datatype=2, bitpix=8, scl=(0.0, 99.0))
        v = nifti_read(raw)
        assert v.data.max() == 7.0

    def test_spacing_from_pixdim(self):
        payload = struct.pack("<8f", *range(8))
        raw = reference_nifti((2, 2, 2), payload, pixdim=(0.5, 1.25, 3.0))
        assert nifti_read(raw).spacing == (0.5, 1.25, 3.0)

    def test_sform_priority(self):
        payload = struct.pack("<8f", *range(8))
        sform = np.array(
            [[2, 0, 0, 5], [0, 2, 0, 6], [0, 0, 2, 7], [0, 0, 0, 1]], dtype=float
        )
        raw = reference_nifti(
            (2, 2, 2), payload, sform=sform, qform=(0.0, 0.0, 0.0, 1.0, 1.0, 1.0)
        )
        v = nifti_read(raw)
        assert np.allclose(v.affine, sform, atol=1e-6)

    def test_qform_identity_quaternion(self):
        payload = struct.pack("<8f", *range(8))
        raw = reference_nifti(
            (2, 2, 2),
            payload,
            pixdim=(2.0, 3.0, 4.0),
            qform=(0.0, 0.0, 0.0, 10.0, 20.0, 30.0),
        )
        v = nifti_read(raw)
        exp = np.diag((2.0, 3.0, 4.0, 1.0))
        exp[:3, 3] = (10.0, 20.0, 30.0)
        assert np.allclose(v.affine, exp, atol=1e-5)

    def test_no_form_falls_back_to_diag(self):
        payload = struct.pack("<8f", *range(8))
        raw = reference_nifti((2, 2, 2), payload, pixdim=(2.0, 2.0, 2.0))
        v = nifti_read(raw)
        assert np.allclose(v.affine, np.diag((2.0, 2.0, 2.0, 1.0)))

    def test_bad_magic(self):
        payload = struct.pack("<8f", *range(8))
        raw = reference_nifti((2, 2, 2), payload, magic=b"abcd")
        with pytest.raises(BadMagic):
            nifti_read(raw)

    def test_not_nifti_at_all(self):
        with pytest.raises(BadMagic):
            nifti_read(b"PK\x03\x04 definitely a zip")

    def test_unsupported_datatype(self):
        payload = struct.pack("<8d", *range(8))
        raw = reference_nifti((2, 2, 2), payload, datatype=64, bitpix=64)
        with pytest.raises(UnsupportedDatatype):
            nifti_read(raw)

    def test_truncated_payload(self):
        payload = struct.pack("<4f", *range(4))  # half the voxels missing
        raw = reference_nifti((2, 2, 2), payload)
        with pytest.raises(TruncatedFile):
            nifti_read(raw)

    def test_truncated_header(self):
        payload = struct.pack("<8f", *range(8))
        raw = reference_nifti((2, 2, 2), payload)
        with pytest.raises(TruncatedFile):
            nifti_read(raw[:200])

    def test_vox_offset_348_accepted(self):
        payload = struct.pack("<8f", *range(8))
        raw = reference_nifti((2, 2, 2), payload, vox_offset=348)
        assert nifti_read(raw).dims == (2, 2, 2)

    def test_gzip_envelope(self):
        payload = struct.pack("<8f", *range(8))
        raw = gzip.compress(reference_nifti((2, 2, 2), payload))
        v = nifti_read(raw)
        assert np.array_equal(v.data.ravel(order="F"), np.arange(8, dtype=np.float32))


class TestWrite:
    def test_payload_length(self):
        v = Volume(np.zeros((2, 2, 2), dtype=np.float32))
        assert len(nifti_write(v)) == 352 + 8 * 4

    def test_gzip_magic(self):
        v = Volume(np.zeros((2, 2, 2), dtype=np.float32))
        assert nifti_write(v, gz=True)[:2] == b"\x1f\x8b"

    def test_gzip_deterministic(self):
        rng = np.random.default_rng(2)
        v = Volume(rng.normal(size=(4, 4, 4)))
        assert nifti_write(v, gz=True) == nifti_write(v, gz=True)

    def test_round_trip_random_volumes(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            dims = tuple(rng.integers(1, 9, size=3))
            aff = np.eye(4)
            aff[:3, :3] = rng.normal(size=(3, 3))
            aff[:3, 3] = rng.normal(size=3) * 10
            v = Volume(
                rng.normal(size=dims).astype(np.float32),
                spacing=tuple(rng.uniform(0.3, 4.0, size=3)),
                affine=aff,
            )
            for gz in (False, True):
                v2 = nifti_read(nifti_write(v, gz=gz))
                assert v2.dims == v.dims
                assert np.array_equal(v2.data, v.data)  # bit-exact
                assert np.allclose(v2.affine, v.affine, atol=1e-6)
                assert np.allclose(v2.spacing, v.spacing, atol=1e-6)

    def test_negative_zero_survives(self):
        data = np.zeros((2, 2, 2), dtype=np.float32)
        data[0, 0, 0] = -0.0
        v2 = nifti_read(nifti_write(Volume(data)))
        assert np.signbit(v2.data[0, 0, 0])

    def test_written_header_fields(self):
        v = Volume(np.zeros((3, 4, 5), dtype=np.float32), spacing=(1.0, 2.0, 3.0))
        raw = nifti_write(v)
        assert struct.unpack_from("<h", raw, 70)[0] == 16  # datatype float32
        assert struct.unpack_from("<f", raw, 108)[0] == 352.0
        assert struct.unpack_from("<h", raw, 254)[0] == 1  # sform_code
        assert struct.unpack_from("<8h", raw, 40)[1:4] == (3, 4, 5)
        assert raw[344:348] == b"n+1\x00"
