"""Click guidance channels, model input assembly, and click simulation.

Clicks become smooth [0,1] attention volumes via a truncated Gaussian; the
training loop manufactures clicks from prediction errors by dropping one
click at the most interior voxel of each error component, largest first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClickOutOfBounds, DimMismatch
from .volume import ClickSet, LabelMask, Volume, connected_components, edt_squared

DEFAULT_SIGMA = 2.0


@dataclass(eq=False)
class GuidanceChannels:
    """Positive and negative click attention volumes, values in [0,1]."""

    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float32)
        self.neg = np.asarray(self.neg, dtype=np.float32)
        if self.pos.shape != self.neg.shape or self.pos.ndim != 3:
            raise ValueError("guidance channels must be two 3D volumes of equal dims")

    @property
    def dims(self):
        return self.pos.shape


@dataclass(eq=False)
class ModelInput:
    """Ordered (image, pos, neg) channel triple on one grid."""

    image: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        if not (self.image.shape == self.pos.shape == self.neg.shape):
            raise ValueError("model input channels must share dims")

    @property
    def dims(self):
        return self.image.shape

    def stack(self) -> np.ndarray:
        """Channels-first (3, nx, ny, nz) float32 view for the model."""
        return np.stack([self.image, self.pos, self.neg]).astype(np.float32)


def _splat(channel, clicks, sigma):
    """Max-combine one truncated Gaussian per click into the channel."""
    nx, ny, nz = channel.shape
    radius = int(np.floor(3.0 * sigma))
    cutoff_sq = (3.0 * sigma) ** 2
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    for cx, cy, cz in clicks:
        if not (0 <= cx < nx and 0 <= cy < ny and 0 <= cz < nz):
            raise ClickOutOfBounds(f"click ({cx},{cy},{cz}) outside dims {channel.shape}")
        x0, x1 = max(cx - radius, 0), min(cx + radius, nx - 1)
        y0, y1 = max(cy - radius, 0), min(cy + radius, ny - 1)
        z0, z1 = max(cz - radius, 0), min(cz + radius, nz - 1)
        dx = offs[x0 - cx + radius : x1 - cx + radius + 1]
        dy = offs[y0 - cy + radius : y1 - cy + radius + 1]
        dz = offs[z0 - cz + radius : z1 - cz + radius + 1]
        dsq = (
            dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2
        )
        g = np.exp(-dsq / (2.0 * sigma * sigma))
        g[dsq > cutoff_sq] = 0.0
        box = channel[x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1]
        np.maximum(box, g.astype(np.float32), out=box)
        channel[cx, cy, cz] = 1.0  # exact at the click site


def encode_clicks(clicks: ClickSet, dims, sigma: float = DEFAULT_SIGMA) -> GuidanceChannels:
    """Render a ClickSet into positive/negative Gaussian guidance channels.

    Each channel is the voxelwise max over that side's clicks of
    exp(-d^2 / (2 sigma^2)), hard-zeroed beyond 3 sigma, exactly 1.0 at the
    click voxel. An empty side yields an all-zero channel.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    pos = np.zeros(dims, dtype=np.float32)
    neg = np.zeros(dims, dtype=np.float32)
    _splat(pos, clicks.positive, sigma)
    _splat(neg, clicks.negative, sigma)
    return GuidanceChannels(pos, neg)


def compose_input(v: Volume, g: GuidanceChannels | None = None) -> ModelInput:
    """Assemble the (image, pos, neg) triple; g=None means zero guidance.

    The image channel is standardized to zero mean and unit variance;
    constant volumes pass through unchanged.
    """
    if g is not None and g.dims != v.dims:
        raise DimMismatch(f"guidance dims {g.dims} vs volume {v.dims}")
    data = v.data.astype(np.float64)
    std = data.std()
    if std > 0:
        img = ((data - data.mean()) / std).astype(np.float32)
    else:
        img = v.data.copy()
    if g is None:
        z = np.zeros(v.dims, dtype=np.float32)
        return ModelInput(img, z, z.copy())
    return ModelInput(img, g.pos, g.neg)


def _component_clicks(err_mask):
    """One interior voxel per error component, largest component first."""
    m = LabelMask(err_mask.astype(np.uint8))
    labels, counts = connected_components(m)
    if counts.size == 0:
        return []
    sq = edt_squared(m)
    nx, ny, _ = err_mask.shape
    flat_lab = labels.ravel(order="F")
    flat_sq = sq.ravel(order="F")
    picks = []
    for k in range(1, counts.size + 1):
        idx = np.nonzero(flat_lab == k)[0]
        best = idx[np.argmax(flat_sq[idx])]  # argmax keeps the first (lowest) index on ties
        x = int(best % nx)
        y = int((best // nx) % ny)
        z = int(best // (nx * ny))
        picks.append((x, y, z))
    return picks


def simulate_clicks(
    pred: LabelMask,
    gt: LabelMask,
    max_clicks: int,
    rng_seed: int = 0,
    jitter: bool = False,
) -> ClickSet:
    """Derive corrective clicks from the disagreement between pred and gt.

    False-negative components receive positive clicks, false-positive
    components negative ones, alternating FN then FP in descending component
    size until max_clicks total. Each click lands on the EDT-argmax (most
    interior) voxel of its component; with jitter enabled the click instead
    samples uniformly among the component's voxels within the top half of
    its interior-depth range, seeded by rng_seed.
    """
    if pred.dims != gt.dims:
        raise DimMismatch(f"pred dims {pred.dims} vs gt {gt.dims}")
    if max_clicks < 0:
        raise ValueError("max_clicks must be >= 0")
    fn = np.logical_and(gt.data == 1, pred.data == 0)
    fp = np.logical_and(pred.data == 1, gt.data == 0)
    if jitter:
        rng = np.random.default_rng(rng_seed)
        pos_picks = _jittered_clicks(fn, rng)
        neg_picks = _jittered_clicks(fp, rng)
    else:
        pos_picks = _component_clicks(fn)
        neg_picks = _component_clicks(fp)
    positive, negative = [], []
    i = j = 0
    while len(positive) + len(negative) < max_clicks and (
        i < len(pos_picks) or j < len(neg_picks)
    ):
        if i < len(pos_picks):
            positive.append(pos_picks[i])
            i += 1
            if len(positive) + len(negative) >= max_clicks:
                break
        if j < len(neg_picks):
            negative.append(neg_picks[j])
            j += 1
    return ClickSet(positive=positive, negative=negative)


def _jittered_clicks(err_mask, rng):
    """Stochastic variant: pick among deep-interior voxels of each component."""
    m = LabelMask(err_mask.astype(np.uint8))
    labels, counts = connected_components(m)
    if counts.size == 0:
        return []
    sq = edt_squared(m)
    nx, ny, _ = err_mask.shape
    flat_lab = labels.ravel(order="F")
    flat_sq = sq.ravel(order="F")
    picks = []
    for k in range(1, counts.size + 1):
        idx = np.nonzero(flat_lab == k)[0]
        depth = flat_sq[idx]
        pool = idx[depth * 2 >= depth.max()]
        best = int(pool[rng.integers(pool.size)])
        picks.append((best % nx, (best // nx) % ny, best // (nx * ny)))
    return picks
