"""Heuristic training-configuration planner.

Derives dataset statistics (robust intensity window, median spacing,
post-resample extents) and proposes spacing, normalization, ROI, and batch
size under an explicit memory budget. The memory model is
bytes = 24 * batch * 3 * prod(roi) * 4: three float32 input channels with
a fixed 24x activation/optimizer overhead factor.

The search walks a single monotone ladder: the cubic ROI grows in powers
of two from 16 (each axis clamped at the next power of two above the
dataset extent) and only once every axis is at its cap does the batch size
grow 2..8. A bigger budget therefore never shrinks either knob; the
literal alternative (always maxing ROI first, then restarting batch at 1)
would drop the batch at every ROI jump.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatastore, InsufficientBudget

OVERHEAD_FACTOR = 24
INPUT_CHANNELS = 3
ROI_FLOOR = 16
BATCH_CAP = 8


@dataclass
class DatasetStats:
    spacing_median: tuple
    intensity_p05: float
    intensity_p995: float
    intensity_mean: float
    intensity_std: float
    max_dims: tuple

    def __post_init__(self):
        if self.intensity_p05 > self.intensity_p995:
            raise ValueError("percentile bounds out of order")
        if self.intensity_std < 0:
            raise ValueError("std must be >= 0")


@dataclass
class Plan:
    target_spacing: tuple
    clip_range: tuple
    norm_mean: float
    norm_std: float
    roi_size: tuple
    batch_size: int

    def estimated_bytes(self) -> int:
        return int(
            OVERHEAD_FACTOR
            * self.batch_size
            * INPUT_CHANNELS
            * int(np.prod(self.roi_size))
            * 4
        )

    def to_json_dict(self) -> dict:
        return {
            "target_spacing": list(self.target_spacing),
            "normalization": {
                "clip_range": list(self.clip_range),
                "mean": self.norm_mean,
                "std": self.norm_std,
            },
            "roi_size": list(self.roi_size),
            "batch_size": self.batch_size,
            "estimated_bytes": self.estimated_bytes(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Plan":
        return cls(
            target_spacing=tuple(d["target_spacing"]),
            clip_range=tuple(d["normalization"]["clip_range"]),
            norm_mean=d["normalization"]["mean"],
            norm_std=d["normalization"]["std"],
            roi_size=tuple(d["roi_size"]),
            batch_size=d["batch_size"],
        )


def _resampled_dims(dims, spacing, target):
    out = []
    for n, s, t in zip(dims, spacing, target):
        out.append(max(int(np.floor(n * s / t + 0.5)), 1))
    return tuple(out)


def dataset_stats(ds) -> DatasetStats:
    """Aggregate intensity and spatial statistics over the labeled images."""
    ids = ds.labeled_ids()
    if not ids:
        raise EmptyDatastore("no labeled images to derive statistics from")
    spacings = []
    chunks = []
    dims_list = []
    for i in ids:
        v = ds.load_image(i)
        spacings.append(v.spacing)
        chunks.append(v.data.ravel())
        dims_list.append(v.dims)
    allv = np.concatenate(chunks).astype(np.float64)
    p05, p995 = np.percentile(allv, [0.5, 99.5])
    clipped = np.clip(allv, p05, p995)
    med = tuple(float(m) for m in np.median(np.asarray(spacings), axis=0))
    max_dims = tuple(
        int(d)
        for d in np.max(
            [_resampled_dims(dims, sp, med) for dims, sp in zip(dims_list, spacings)],
            axis=0,
        )
    )
    return DatasetStats(
        spacing_median=med,
        intensity_p05=float(p05),
        intensity_p995=float(p995),
        intensity_mean=float(clipped.mean()),
        intensity_std=float(clipped.std()),
        max_dims=max_dims,
    )


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def _ladder(caps):
    """Every (roi, batch) the planner may return, in increasing-cost order."""
    rungs = []
    size = ROI_FLOOR
    while True:
        roi = tuple(min(size, c) for c in caps)
        rungs.append((roi, 1))
        if all(min(size, c) == c for c in caps):
            break
        size *= 2
    top_roi = rungs[-1][0]
    rungs.extend((top_roi, b) for b in range(2, BATCH_CAP + 1))
    return rungs


def _bytes_for(roi, batch) -> int:
    return OVERHEAD_FACTOR * batch * INPUT_CHANNELS * int(np.prod(roi)) * 4


def plan(stats: DatasetStats, budget_bytes: int) -> Plan:
    """Propose the largest ladder configuration within the byte budget."""
    if budget_bytes <= 0:
        raise ValueError("budget_bytes must be > 0")
    caps = tuple(max(ROI_FLOOR, _next_pow2(d)) for d in stats.max_dims)
    best = None
    for roi, batch in _ladder(caps):
        if _bytes_for(roi, batch) <= budget_bytes:
            best = (roi, batch)
        else:
            break
    if best is None:
        raise InsufficientBudget(
            f"the {ROI_FLOOR}^3 batch-1 floor needs "
            f"{_bytes_for((ROI_FLOOR,) * 3, 1)} bytes, budget is {budget_bytes}"
        )
    std = stats.intensity_std if stats.intensity_std > 0 else 1.0
    return Plan(
        target_spacing=stats.spacing_median,
        clip_range=(stats.intensity_p05, stats.intensity_p995),
        norm_mean=stats.intensity_mean,
        norm_std=std,
        roi_size=best[0],
        batch_size=best[1],
    )


def apply_normalization(p: Plan, data: np.ndarray) -> np.ndarray:
    """Clip to the plan's window, then standardize with its moments."""
    c = np.clip(data.astype(np.float64), p.clip_range[0], p.clip_range[1])
    return (c - p.norm_mean) / p.norm_std


def save_plan(p: Plan, path) -> None:
    with open(str(path), "w") as f:
        json.dump(p.to_json_dict(), f, indent=2)


def load_plan(path) -> Plan:
    with open(str(path)) as f:
        return Plan.from_json_dict(json.load(f))
