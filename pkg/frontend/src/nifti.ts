// NIfTI-1 single-file codec (.nii / .nii.gz).
//
// Mirrors the server's layout so a volume encoded here and decoded there (or
// the other way round) survives bit-exactly: 348-byte header, 4-byte extender,
// voxels at vox_offset in F order (x fastest). Reading accepts either
// endianness and the four scalar datatypes uint8/int16/int32/float32; writing
// always emits little-endian float32 with the affine in the sform.

export class NiftiError extends Error {
  /** Header field that failed, e.g. "sizeof_hdr", "magic", "datatype". */
  field: string;

  constructor(field: string, message: string) {
    super(message);
    this.name = "NiftiError";
    this.field = field;
  }
}

export interface NiftiVolume {
  dims: [number, number, number];
  spacing: [number, number, number];
  /** 4x4 voxel-to-world matrix, row major. */
  affine: number[][];
  /** F-order voxels: index = x + nx*(y + ny*z). */
  data: Float32Array;
}

const HDR_SIZE = 348;

// header byte offsets (little- or big-endian per sizeof_hdr)
const OFF_DIM = 40; // 8 x int16
const OFF_DATATYPE = 70; // int16
const OFF_BITPIX = 72; // int16
const OFF_PIXDIM = 76; // 8 x float32
const OFF_VOX_OFFSET = 108; // float32
const OFF_SCL_SLOPE = 112; // float32
const OFF_SCL_INTER = 116; // float32
const OFF_XYZT_UNITS = 123; // uint8
const OFF_QFORM_CODE = 252; // int16
const OFF_SFORM_CODE = 254; // int16
const OFF_QUAT = 256; // 6 x float32: quatern_b/c/d, qoffset_x/y/z
const OFF_SROW = 280; // 12 x float32
const OFF_MAGIC = 344; // 4 bytes

const DTYPE_BYTES: Record<number, number> = { 2: 1, 4: 2, 8: 4, 16: 4 };

function isGzip(b: Uint8Array): boolean {
  return b.length >= 2 && b[0] === 0x1f && b[1] === 0x8b;
}

async function gunzip(b: Uint8Array): Promise<Uint8Array> {
  // DecompressionStream exists in browsers and in node 20, so decode shares
  // one code path with the e2e tests.
  const stream = new Blob([b as BlobPart]).stream().pipeThrough(
    new DecompressionStream("gzip"),
  );
  return new Uint8Array(await new Response(stream).arrayBuffer());
}

function quatToAffine(
  b: number,
  c: number,
  d: number,
  qfac: number,
  spacing: [number, number, number],
  offsets: [number, number, number],
): number[][] {
  const a = Math.sqrt(Math.max(1.0 - (b * b + c * c + d * d), 0.0));
  const r = [
    [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
    [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
    [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
  ];
  const s = [spacing[0], spacing[1], spacing[2] * (qfac !== 0 ? qfac : 1.0)];
  const aff = [
    [0, 0, 0, offsets[0]],
    [0, 0, 0, offsets[1]],
    [0, 0, 0, offsets[2]],
    [0.0, 0.0, 0.0, 1.0],
  ];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) aff[i][j] = r[i][j] * s[j];
  }
  return aff;
}

export async function decodeNifti(
  raw: ArrayBuffer | Uint8Array,
): Promise<NiftiVolume> {
  let bytes = raw instanceof Uint8Array ? raw : new Uint8Array(raw);
  if (isGzip(bytes)) {
    try {
      bytes = await gunzip(bytes);
    } catch (e) {
      throw new NiftiError("gzip", `bad gzip stream: ${e}`);
    }
  }
  if (bytes.length < 4) {
    throw new NiftiError("sizeof_hdr", "file too short to be NIfTI-1");
  }
  const dv = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let le: boolean;
  if (dv.getInt32(0, true) === HDR_SIZE) le = true;
  else if (dv.getInt32(0, false) === HDR_SIZE) le = false;
  else {
    throw new NiftiError("sizeof_hdr", "sizeof_hdr is not 348; not a NIfTI-1 file");
  }
  if (bytes.length < HDR_SIZE) {
    throw new NiftiError(
      "sizeof_hdr",
      `header needs 348 bytes, got ${bytes.length}`,
    );
  }
  const magic = bytes.subarray(OFF_MAGIC, OFF_MAGIC + 4);
  const magicStr = String.fromCharCode(magic[0], magic[1], magic[2]);
  if (!((magicStr === "n+1" || magicStr === "ni1") && magic[3] === 0)) {
    throw new NiftiError("magic", `magic ${JSON.stringify(magicStr)}`);
  }

  const datatype = dv.getInt16(OFF_DATATYPE, le);
  const itemBytes = DTYPE_BYTES[datatype];
  if (itemBytes === undefined) {
    throw new NiftiError("datatype", `datatype code ${datatype}`);
  }
  const nx = Math.max(dv.getInt16(OFF_DIM + 2, le), 1);
  const ny = Math.max(dv.getInt16(OFF_DIM + 4, le), 1);
  const nz = Math.max(dv.getInt16(OFF_DIM + 6, le), 1);
  const n = nx * ny * nz;

  let voxOffset = Math.trunc(dv.getFloat32(OFF_VOX_OFFSET, le));
  if (voxOffset < HDR_SIZE) voxOffset = HDR_SIZE;
  const need = voxOffset + n * itemBytes;
  if (bytes.length < need) {
    throw new NiftiError(
      "vox_offset",
      `payload needs ${need} bytes, file has ${bytes.length}`,
    );
  }

  const data = new Float32Array(n);
  const body = new DataView(bytes.buffer, bytes.byteOffset + voxOffset);
  switch (datatype) {
    case 2:
      for (let i = 0; i < n; i++) data[i] = body.getUint8(i);
      break;
    case 4:
      for (let i = 0; i < n; i++) data[i] = body.getInt16(2 * i, le);
      break;
    case 8:
      for (let i = 0; i < n; i++) data[i] = body.getInt32(4 * i, le);
      break;
    default:
      for (let i = 0; i < n; i++) data[i] = body.getFloat32(4 * i, le);
  }

  // intensity rescale, skipping the identity pair so float32 voxels round-trip
  // bit-exactly
  const slope = dv.getFloat32(OFF_SCL_SLOPE, le);
  const inter = dv.getFloat32(OFF_SCL_INTER, le);
  if (slope !== 0.0 && !(slope === 1.0 && inter === 0.0)) {
    for (let i = 0; i < n; i++) {
      data[i] = Math.fround(Math.fround(data[i] * slope) + inter);
    }
  }

  const spacing: [number, number, number] = [1.0, 1.0, 1.0];
  for (let i = 0; i < 3; i++) {
    const p = dv.getFloat32(OFF_PIXDIM + 4 * (i + 1), le);
    if (Number.isFinite(p) && p > 0) spacing[i] = p;
  }

  // affine priority: sform, then qform, then a diagonal from pixdim
  const sformCode = dv.getInt16(OFF_SFORM_CODE, le);
  const qformCode = dv.getInt16(OFF_QFORM_CODE, le);
  let affine: number[][];
  if (sformCode > 0) {
    affine = [[], [], [], [0.0, 0.0, 0.0, 1.0]] as number[][];
    for (let r = 0; r < 3; r++) {
      for (let c = 0; c < 4; c++) {
        affine[r][c] = dv.getFloat32(OFF_SROW + 4 * (4 * r + c), le);
      }
    }
  } else if (qformCode > 0) {
    const q = [0, 0, 0, 0, 0, 0];
    for (let i = 0; i < 6; i++) q[i] = dv.getFloat32(OFF_QUAT + 4 * i, le);
    const qfac = dv.getFloat32(OFF_PIXDIM, le);
    affine = quatToAffine(q[0], q[1], q[2], qfac, spacing, [q[3], q[4], q[5]]);
  } else {
    affine = [
      [spacing[0], 0, 0, 0],
      [0, spacing[1], 0, 0],
      [0, 0, spacing[2], 0],
      [0, 0, 0, 1],
    ];
  }

  return { dims: [nx, ny, nz], spacing, affine, data };
}

export interface EncodeInput {
  dims: [number, number, number];
  data: Float32Array;
  spacing?: [number, number, number];
  affine?: number[][];
}

/**
 * Serialize to uncompressed little-endian float32 NIfTI-1 bytes with the same
 * header the server writes: vox_offset 352, scl identity, sform_code 1.
 */
export function encodeNifti(vol: EncodeInput): Uint8Array {
  const [nx, ny, nz] = vol.dims;
  const n = nx * ny * nz;
  if (vol.data.length !== n) {
    throw new NiftiError("dim", `data length ${vol.data.length} vs dims ${vol.dims}`);
  }
  const spacing = vol.spacing ?? [1.0, 1.0, 1.0];
  const affine = vol.affine ?? [
    [spacing[0], 0, 0, 0],
    [0, spacing[1], 0, 0],
    [0, 0, spacing[2], 0],
    [0, 0, 0, 1],
  ];

  const buf = new ArrayBuffer(352 + 4 * n);
  const dv = new DataView(buf);
  dv.setInt32(0, HDR_SIZE, true);
  const dim = [3, nx, ny, nz, 1, 1, 1, 1];
  for (let i = 0; i < 8; i++) dv.setInt16(OFF_DIM + 2 * i, dim[i], true);
  dv.setInt16(OFF_DATATYPE, 16, true); // float32
  dv.setInt16(OFF_BITPIX, 32, true);
  const pixdim = [0.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0];
  for (let i = 0; i < 8; i++) dv.setFloat32(OFF_PIXDIM + 4 * i, pixdim[i], true);
  dv.setFloat32(OFF_VOX_OFFSET, 352.0, true);
  dv.setFloat32(OFF_SCL_SLOPE, 1.0, true);
  dv.setFloat32(OFF_SCL_INTER, 0.0, true);
  dv.setUint8(OFF_XYZT_UNITS, 2); // spatial units mm
  dv.setInt16(OFF_QFORM_CODE, 0, true);
  dv.setInt16(OFF_SFORM_CODE, 1, true);
  for (let r = 0; r < 3; r++) {
    for (let c = 0; c < 4; c++) {
      dv.setFloat32(OFF_SROW + 4 * (4 * r + c), affine[r][c], true);
    }
  }
  const out = new Uint8Array(buf);
  out.set([0x6e, 0x2b, 0x31, 0x00], OFF_MAGIC); // "n+1\0"
  // 4-byte extender stays zero; payload starts at 352
  for (let i = 0; i < n; i++) dv.setFloat32(352 + 4 * i, vol.data[i], true);
  return out;
}

/** F-order flat index for voxel (x, y, z). */
export function flatIndex(
  dims: [number, number, number],
  x: number,
  y: number,
  z: number,
): number {
  return x + dims[0] * (y + dims[1] * z);
}
