"""Uncertainty scoring and next-image selection.

Epistemic: variance across stochastic dropout passes. Aleatoric: variance
across flip-group test-time augmentations. Both aggregate per-voxel
population variance to its mean over the volume, so scores are comparable
across differently sized images.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPool, UnknownImage, UnknownStrategy
from .model import ReferenceModel, predict
from .volume import Volume

# the full flip group: one bool per axis
FLIP_GROUP = tuple(
    (bool(b & 4), bool(b & 2), bool(b & 1)) for b in range(8)
)


@dataclass(frozen=True)
class Sequential:
    name = "first"


@dataclass(frozen=True)
class Random:
    seed: int = 0
    name = "random"


@dataclass(frozen=True)
class Epistemic:
    n_passes: int = 10
    dropout_rate: float = 0.2
    seed: int = 0
    name = "epistemic"

    def __post_init__(self):
        if self.n_passes < 2:
            raise ValueError("epistemic scoring needs at least 2 passes")


@dataclass(frozen=True)
class Aleatoric:
    n_augment: int = 8
    seed: int = 0
    name = "tta"

    def __post_init__(self):
        if not 2 <= self.n_augment <= len(FLIP_GROUP):
            raise ValueError("n_augment must be in [2, 8]")


@dataclass
class ScoredImage:
    image_id: str
    score: float
    strategy: str
    timestamp: float

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "score": self.score,
            "strategy": self.strategy,
            "timestamp": self.timestamp,
        }


def strategy_from_name(name: str, seed: int = 0):
    """Map a wire-format strategy name to a Strategy instance."""
    if name == "first":
        return Sequential()
    if name == "random":
        return Random(seed=seed)
    if name == "epistemic":
        return Epistemic(seed=seed)
    if name == "tta":
        return Aleatoric(seed=seed)
    raise UnknownStrategy(f"no strategy named {name!r}")


def _mean_population_variance(stack: np.ndarray) -> float:
    """Mean per-voxel variance; exactly 0 when all rows are identical.

    Subtracting the first row before the moment computation keeps the
    all-identical case at exactly 0.0, which np.var alone does not
    guarantee once means pick up rounding error.
    """
    d = stack - stack[0]
    var = np.mean(d * d, axis=0) - np.mean(d, axis=0) ** 2
    return float(np.mean(np.maximum(var, 0.0)))


def epistemic_score(
    m: ReferenceModel,
    v: Volume,
    n_passes: int = 10,
    dropout_rate: float = 0.2,
    seed: int = 0,
) -> float:
    """Mean per-voxel variance across stochastic zero-guidance passes."""
    if n_passes < 2:
        raise ValueError("epistemic scoring needs at least 2 passes")
    scorer = ReferenceModel(m.weights.copy(), dropout_rate)
    stack = np.stack(
        [
            predict(scorer, v, None, stochastic=True, rng_seed=seed + i).ravel()
            for i in range(n_passes)
        ]
    )
    return _mean_population_variance(stack)


def _flip(data: np.ndarray, flips) -> np.ndarray:
    axes = [ax for ax, f in enumerate(flips) if f]
    return np.flip(data, axis=axes) if axes else data


def aleatoric_score(
    m: ReferenceModel,
    v: Volume,
    n_augment: int = 8,
    seed: int = 0,
    augmentations=None,
) -> float:
    """Mean per-voxel variance across inverse-transformed flip predictions.

    Augmentations are sampled without replacement from the 8-element axis
    flip group unless an explicit list of flip triples is supplied (the
    explicit list may repeat entries, which is how the zero-variance
    degenerate case is exercised).
    """
    if augmentations is None:
        if not 2 <= n_augment <= len(FLIP_GROUP):
            raise ValueError("n_augment must be in [2, 8]")
        rng = np.random.default_rng(seed)
        picks = rng.permutation(len(FLIP_GROUP))[:n_augment]
        augmentations = [FLIP_GROUP[i] for i in picks]
    preds = []
    for flips in augmentations:
        va = Volume(_flip(v.data, flips), spacing=v.spacing)
        p = predict(m, va, None, stochastic=False)
        preds.append(_flip(p, flips).ravel())  # flips are involutions
    return _mean_population_variance(np.stack(preds))


def _image_seed(strategy_seed: int, image_id: str) -> int:
    # stable per-image stream regardless of pool composition
    return (int(strategy_seed) + zlib.crc32(image_id.encode())) % (2**32)


def rank(pool, strategy, model: ReferenceModel | None, datastore) -> list:
    """Order candidate images for annotation under the given strategy.

    Sequential keeps datastore insertion order; Random is a seeded
    shuffle; Epistemic and Aleatoric sort by descending uncertainty score
    with image-id ties resolved lexicographically.
    """
    known = datastore.list_images()
    known_set = set(known)
    for image_id in pool:
        if image_id not in known_set:
            raise UnknownImage(image_id)
    # normalize to insertion order so ranking ignores caller pool order
    pool_set = set(pool)
    ordered = [i for i in known if i in pool_set]
    now = time.time()
    if isinstance(strategy, Sequential):
        return [ScoredImage(i, 0.0, strategy.name, now) for i in ordered]
    if isinstance(strategy, Random):
        rng = np.random.default_rng(strategy.seed)
        perm = rng.permutation(len(ordered))
        return [ScoredImage(ordered[k], 0.0, strategy.name, now) for k in perm]
    if isinstance(strategy, Epistemic):
        scored = [
            ScoredImage(
                i,
                epistemic_score(
                    model,
                    datastore.load_image(i),
                    strategy.n_passes,
                    strategy.dropout_rate,
                    _image_seed(strategy.seed, i),
                ),
                strategy.name,
                now,
            )
            for i in ordered
        ]
    elif isinstance(strategy, Aleatoric):
        scored = [
            ScoredImage(
                i,
                aleatoric_score(
                    model,
                    datastore.load_image(i),
                    strategy.n_augment,
                    _image_seed(strategy.seed, i),
                ),
                strategy.name,
                now,
            )
            for i in ordered
        ]
    else:
        raise UnknownStrategy(f"unsupported strategy object {strategy!r}")
    scored.sort(key=lambda s: (-s.score, s.image_id))
    return scored


def next_image(pool, strategy, model: ReferenceModel | None, datastore) -> str:
    """Head of rank(); the single image the annotator should label next."""
    if not pool:
        raise EmptyPool("no unlabeled images to choose from")
    return rank(pool, strategy, model, datastore)[0].image_id
