"""Online intensity model fitted from scribbles.

Per-class Laplace-smoothed histograms over a robust intensity range; the
negative log-likelihoods feed the graph-cut stage as unary costs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadBins, MissingClass
from .volume import ScribbleMask, Volume, robust_range

DEFAULT_BINS = 128


def _bin_of(values, lo, hi, bin_count):
    """Map intensities to bin indices; out-of-range values clamp to end bins."""
    t = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)
    idx = np.floor(t * bin_count).astype(np.int64)
    return np.clip(idx, 0, bin_count - 1)


@dataclass(eq=False)
class IntensityHistogramModel:
    """Two smoothed per-bin probability tables over a shared robust range."""

    bin_count: int
    range: tuple[float, float]
    p_fg: np.ndarray
    p_bg: np.ndarray

    def __post_init__(self):
        for p in (self.p_fg, self.p_bg):
            if p.shape != (self.bin_count,):
                raise ValueError("probability table length must equal bin_count")
            if not np.all(p > 0):
                raise ValueError("smoothed probabilities must be strictly positive")
            if abs(float(p.sum()) - 1.0) > 1e-9:
                raise ValueError("probabilities must sum to 1")

    def bin_of(self, intensities: np.ndarray) -> np.ndarray:
        return _bin_of(intensities, self.range[0], self.range[1], self.bin_count)


def fit_from_scribbles(
    v: Volume, s: ScribbleMask, bin_count: int = DEFAULT_BINS
) -> IntensityHistogramModel:
    """Fit per-class intensity histograms from scribbled voxels.

    Range is the volume's (0.5, 99.5) percentile span widened to a positive
    width; each class histogram gets Laplace smoothing with eps = 1 per bin.
    """
    if bin_count < 2:
        raise BadBins(f"need at least 2 bins, got {bin_count}")
    if v.dims != s.dims:
        raise ValueError(f"volume dims {v.dims} vs scribble dims {s.dims}")
    fg = s.foreground
    bg = s.background
    if not fg.any():
        raise MissingClass("no foreground scribbles")
    if not bg.any():
        raise MissingClass("no background scribbles")
    lo, hi = robust_range(v.data)

    def smoothed(values):
        idx = _bin_of(values, lo, hi, bin_count)
        counts = np.bincount(idx, minlength=bin_count).astype(np.float64)
        return (counts + 1.0) / (counts.sum() + bin_count)

    p_fg = smoothed(v.data[fg])
    p_bg = smoothed(v.data[bg])
    return IntensityHistogramModel(bin_count, (lo, hi), p_fg, p_bg)


def unary_costs(m: IntensityHistogramModel, v: Volume):
    """Per-voxel negative log-likelihood pair (cost_bg, cost_fg)."""
    idx = m.bin_of(v.data)
    cost_bg = -np.log(m.p_bg[idx])
    cost_fg = -np.log(m.p_fg[idx])
    return cost_bg, cost_fg
