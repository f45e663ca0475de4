"""Volumetric data types and grid-level operations.

Arrays are indexed ``[x, y, z]`` and linearized x-fastest (Fortran order)
wherever a flat voxel index is needed, matching the on-disk NIfTI layout.
All types are treated as immutable after construction; the operations in
this module are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import DegenerateOutput, DimMismatch

# sentinel squared distance, far above any reachable value yet exact in float64
_EDT_INF = 1 << 40


def default_affine(spacing):
    """Diagonal voxel-to-world matrix for the given spacing."""
    a = np.eye(4)
    a[0, 0], a[1, 1], a[2, 2] = spacing
    return a


@dataclass(eq=False)
class Volume:
    """A 3D scalar grid with physical spacing and a voxel-to-world affine."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be three finite positive values, got {self.spacing}")
        if self.affine is None:
            self.affine = default_affine(self.spacing)
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")
        if not np.allclose(self.affine[3], (0.0, 0.0, 0.0, 1.0)):
            raise ValueError("affine last row must be (0, 0, 0, 1)")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(eq=False)
class LabelMask:
    """Binary segmentation on a volume grid: 0 background, 1 foreground."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3:
            raise ValueError(f"mask data must be 3D, got shape {self.data.shape}")
        if self.data.max(initial=0) > 1:
            raise ValueError("label mask values must be 0 or 1")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(eq=False)
class ScribbleMask:
    """User strokes: 0 unmarked, 2 foreground scribble, 3 background scribble."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3:
            raise ValueError(f"scribble data must be 3D, got shape {self.data.shape}")
        bad = ~np.isin(self.data, (0, 2, 3))
        if bad.any():
            raise ValueError("scribble values must be in {0, 2, 3}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def foreground(self) -> np.ndarray:
        return self.data == 2

    @property
    def background(self) -> np.ndarray:
        return self.data == 3


@dataclass
class ClickSet:
    """Positive and negative click coordinates in voxel units."""

    positive: list[tuple[int, int, int]] = field(default_factory=list)
    negative: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.positive = [tuple(int(c) for c in p) for p in self.positive]
        self.negative = [tuple(int(c) for c in p) for p in self.negative]

    def is_empty(self) -> bool:
        return not self.positive and not self.negative

    def to_json_dict(self) -> dict:
        return {
            "foreground": [list(p) for p in self.positive],
            "background": [list(p) for p in self.negative],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ClickSet":
        return cls(
            positive=[tuple(p) for p in d.get("foreground", [])],
            negative=[tuple(p) for p in d.get("background", [])],
        )


def dice(a: LabelMask, b: LabelMask) -> float:
    """Dice overlap 2|A∩B| / (|A|+|B|); 1.0 when both masks are empty."""
    if a.dims != b.dims:
        raise DimMismatch(f"dice: {a.dims} vs {b.dims}")
    na = int(a.data.sum())
    nb = int(b.data.sum())
    if na == 0 and nb == 0:
        return 1.0
    inter = int(np.logical_and(a.data, b.data).sum())
    return 2.0 * inter / (na + nb)


def connected_components(m: LabelMask) -> tuple[np.ndarray, np.ndarray]:
    """Partition foreground voxels into 6-connected components.

    Returns ``(labels, counts)`` where labels is an int32 volume with
    background 0 and components numbered 1..K by descending voxel count
    (ties broken by the smallest x-fastest linear index), and counts[k-1]
    is the size of component k.
    """
    raw, k = ndimage.label(m.data, structure=ndimage.generate_binary_structure(3, 1))
    if k == 0:
        return raw.astype(np.int32), np.zeros(0, dtype=np.int64)
    flat = raw.ravel(order="F")
    sizes = np.bincount(flat, minlength=k + 1)[1:]
    first = np.full(k + 1, flat.size, dtype=np.int64)
    nz = np.nonzero(flat)[0]
    # reversed so earlier indices overwrite later ones
    first[flat[nz[::-1]]] = nz[::-1]
    order = sorted(range(1, k + 1), key=lambda c: (-sizes[c - 1], first[c]))
    remap = np.zeros(k + 1, dtype=np.int32)
    for new, old in enumerate(order, start=1):
        remap[old] = new
    labels = remap[raw]
    counts = sizes[np.array(order) - 1].astype(np.int64)
    return labels, counts


@njit(cache=True)
def _edt_1d(f, n):
    """Felzenszwalb-Huttenlocher lower-envelope pass over one row.

    f holds squared distances on entry and exit; intermediate parabola
    vertices are kept in integer arithmetic so results stay exact.
    """
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    d = np.empty(n, dtype=np.int64)
    k = 0
    v[0] = 0
    z[0] = -1e30
    z[1] = 1e30
    for q in range(1, n):
        s = (f[q] + q * q - f[v[k]] - v[k] * v[k]) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = (f[q] + q * q - f[v[k]] - v[k] * v[k]) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = 1e30
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) * (q - v[k]) + f[v[k]]
    for q in range(n):
        f[q] = d[q]


@njit(cache=True)
def _edt_sq(mask):
    """Exact squared Euclidean distance to the nearest zero voxel."""
    nx, ny, nz = mask.shape
    f = np.empty((nx, ny, nz), dtype=np.int64)
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                f[x, y, z] = 0 if mask[x, y, z] == 0 else _EDT_INF
    row = np.empty(max(nx, max(ny, nz)), dtype=np.int64)
    for y in range(ny):
        for z in range(nz):
            for x in range(nx):
                row[x] = f[x, y, z]
            _edt_1d(row, nx)
            for x in range(nx):
                f[x, y, z] = row[x]
    for x in range(nx):
        for z in range(nz):
            for y in range(ny):
                row[y] = f[x, y, z]
            _edt_1d(row, ny)
            for y in range(ny):
                f[x, y, z] = row[y]
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                row[z] = f[x, y, z]
            _edt_1d(row, nz)
            for z in range(nz):
                f[x, y, z] = row[z]
    return f


def edt_squared(m: LabelMask) -> np.ndarray:
    """Exact integer squared distances; no background at all gives the sentinel."""
    return _edt_sq(np.ascontiguousarray(m.data))


def edt(m: LabelMask) -> np.ndarray:
    """Euclidean distance (voxel units) from foreground to nearest background.

    Separable exact squared-distance transform, one lower-envelope pass per
    axis. Background voxels get 0; a mask with no background voxels gets inf.
    """
    sq = edt_squared(m)
    out = np.sqrt(sq.astype(np.float64))
    out[sq >= _EDT_INF] = np.inf
    return out


def _output_dims(dims, spacing, target_spacing):
    out = []
    for n, s, t in zip(dims, spacing, target_spacing):
        raw = n * s / t
        o = int(np.floor(raw + 0.5))
        if o == 0 and n > 1:
            raise DegenerateOutput(
                f"axis with {n} voxels at spacing {s} collapses at target spacing {t}"
            )
        out.append(max(o, 1))
    return tuple(out)


def _source_coords(out_dims, dims, spacing, target_spacing):
    # voxel-center mapping that preserves the world extent of the grid
    coords = []
    for n_out, n_in, s, t in zip(out_dims, dims, spacing, target_spacing):
        scale = t / s
        coords.append((np.arange(n_out) + 0.5) * scale - 0.5)
    return coords


def _resample_affine(affine, dims, spacing, target_spacing):
    shift = np.eye(4)
    for ax in range(3):
        scale = target_spacing[ax] / spacing[ax]
        shift[ax, ax] = scale
        shift[ax, 3] = (scale - 1.0) / 2.0
    return affine @ shift


def resample(v, target_spacing, source_spacing=None):
    """Resample a Volume (trilinear) or LabelMask (nearest) to a new spacing.

    Output dims are round(dims * spacing / target), clamped to at least one
    voxel; raises DegenerateOutput if a non-trivial axis would vanish.
    A LabelMask carries no spacing of its own, so source_spacing names the
    spacing of its paired volume (default isotropic 1 mm).
    """
    target_spacing = tuple(float(t) for t in target_spacing)
    if any(t <= 0 for t in target_spacing):
        raise ValueError(f"target spacing must be positive, got {target_spacing}")
    if isinstance(v, LabelMask):
        spacing = tuple(float(s) for s in (source_spacing or (1.0, 1.0, 1.0)))
        out_dims = _output_dims(v.dims, spacing, target_spacing)
        cx, cy, cz = _source_coords(out_dims, v.dims, spacing, target_spacing)
        # round half up so nearest-neighbor picks are stable across platforms
        ix = np.clip(np.floor(cx + 0.5).astype(np.int64), 0, v.dims[0] - 1)
        iy = np.clip(np.floor(cy + 0.5).astype(np.int64), 0, v.dims[1] - 1)
        iz = np.clip(np.floor(cz + 0.5).astype(np.int64), 0, v.dims[2] - 1)
        return LabelMask(v.data[np.ix_(ix, iy, iz)])
    spacing = v.spacing
    out_dims = _output_dims(v.dims, spacing, target_spacing)
    cx, cy, cz = _source_coords(out_dims, v.dims, spacing, target_spacing)
    out = _trilinear(v.data, cx, cy, cz)
    affine = _resample_affine(v.affine, v.dims, spacing, target_spacing)
    return Volume(out, spacing=target_spacing, affine=affine)


def _trilinear(data, cx, cy, cz):
    """Sample data at the outer product of the three coordinate vectors."""
    nx, ny, nz = data.shape

    def split(c, n):
        c = np.clip(c, 0.0, n - 1.0)
        lo = np.floor(c).astype(np.int64)
        lo = np.minimum(lo, n - 2) if n > 1 else np.zeros_like(lo)
        frac = c - lo
        return lo, frac

    x0, fx = split(cx, nx)
    y0, fy = split(cy, ny)
    z0, fz = split(cz, nz)
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    z1 = np.minimum(z0 + 1, nz - 1)
    d = data.astype(np.float64)
    fx = fx[:, None, None]
    fy = fy[None, :, None]
    fz = fz[None, None, :]
    c000 = d[np.ix_(x0, y0, z0)]
    c100 = d[np.ix_(x1, y0, z0)]
    c010 = d[np.ix_(x0, y1, z0)]
    c110 = d[np.ix_(x1, y1, z0)]
    c001 = d[np.ix_(x0, y0, z1)]
    c101 = d[np.ix_(x1, y0, z1)]
    c011 = d[np.ix_(x0, y1, z1)]
    c111 = d[np.ix_(x1, y1, z1)]
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return (c0 * (1 - fz) + c1 * fz).astype(np.float32)


def robust_range(data, lo_pct=0.5, hi_pct=99.5):
    """Percentile intensity range, widened to a positive span."""
    lo, hi = np.percentile(data, [lo_pct, hi_pct])
    lo, hi = float(lo), float(hi)
    if not hi > lo:
        hi = lo + max(abs(lo), 1.0) * np.finfo(np.float64).eps
    return lo, hi


def robust_std(data):
    """Population std of intensities clipped to the robust range."""
    lo, hi = robust_range(data)
    return float(np.clip(data, lo, hi).std())
