"""Per-voxel logistic segmentation model with hand-derived gradients.

Stands in for a segmentation network behind the same interfaces: featurize
builds fixed multiscale features from the (image, pos, neg) input triple,
predict turns them into foreground probabilities (optionally with feature
dropout for stochastic passes), and train runs the click-simulation
schedules (automatic / deepgrow / deepedit) with a hand-rolled Adam.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d
from scipy.special import expit

from .errors import BadMagic, EmptyDataset, TruncatedFile
from .guidance import ModelInput, compose_input, encode_clicks, simulate_clicks
from .volume import ClickSet, LabelMask, Volume, dice

FEATURE_SCALES = (1.0, 2.0, 4.0)
FEATURE_COUNT = 8
CHECKPOINT_MAGIC = b"LFMODEL1"
MODES = ("automatic", "deepgrow", "deepedit")


@dataclass(eq=False)
class ReferenceModel:
    """Logistic weights over 8 fixed features plus a bias term."""

    weights: np.ndarray = None
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.zeros(FEATURE_COUNT + 1, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (FEATURE_COUNT + 1,):
            raise ValueError(f"expected {FEATURE_COUNT + 1} weights, got {self.weights.shape}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    def copy(self) -> "ReferenceModel":
        return ReferenceModel(self.weights.copy(), self.dropout_rate)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    mode: str = "automatic"
    click_budget: int = 5
    rng_seed: int = 0
    # non-default variant of the deepedit schedule: seeded coin flips
    # instead of strict even/odd alternation
    stochastic_alternation: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.click_budget < 0:
            raise ValueError("click_budget must be >= 0")

    def to_json_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "epochs": self.epochs,
            "mode": self.mode,
            "click_budget": self.click_budget,
            "rng_seed": self.rng_seed,
            "stochastic_alternation": self.stochastic_alternation,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        known = {k: d[k] for k in cls().to_json_dict() if k in d}
        return cls(**known)


@dataclass
class TrainReport:
    """Per-epoch loss and validation Dice, plus the guidance schedule."""

    epoch_loss: list = field(default_factory=list)
    epoch_val_dice: list = field(default_factory=list)
    # one bool list per epoch: True where the iteration used zero guidance
    zero_guidance_trace: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "epoch_loss": self.epoch_loss,
            "epoch_val_dice": self.epoch_val_dice,
            "zero_guidance_trace": self.zero_guidance_trace,
        }


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def _gauss_kernel(sigma):
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_smooth(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian with an explicit normalized kernel, edge-replicated."""
    out = data.astype(np.float64)
    k = _gauss_kernel(sigma)
    for ax in range(3):
        out = correlate1d(out, k, axis=ax, mode="nearest")
    return out


def featurize(mi: ModelInput) -> np.ndarray:
    """Per-voxel feature matrix, shape (n_voxels, 8), x-fastest row order.

    Columns: raw intensity, Gaussian-smoothed intensity at scales 1/2/4,
    pos guidance, neg guidance, pos*intensity, neg*intensity.
    """
    img = mi.image.astype(np.float64)
    pos = mi.pos.astype(np.float64)
    neg = mi.neg.astype(np.float64)
    cols = [img]
    cols.extend(gaussian_smooth(img, s) for s in FEATURE_SCALES)
    cols.extend([pos, neg, pos * img, neg * img])
    return np.stack([c.ravel(order="F") for c in cols], axis=1)


def _logits(weights, feats):
    return feats @ weights[:-1] + weights[-1]


def predict(
    m: ReferenceModel,
    v: Volume,
    clicks: ClickSet | None = None,
    stochastic: bool = False,
    rng_seed: int = 0,
) -> np.ndarray:
    """Foreground probability volume; clicks None means zero guidance.

    A stochastic pass scales each feature column by an independent
    Bernoulli(keep=1-dropout_rate)/keep mask drawn once per call, which
    leaves the bias untouched; dropout_rate 0 reproduces the deterministic
    output bit-exactly.
    """
    g = None
    if clicks is not None and not clicks.is_empty():
        g = encode_clicks(clicks, v.dims)
    feats = featurize(compose_input(v, g))
    if stochastic and m.dropout_rate > 0.0:
        keep = 1.0 - m.dropout_rate
        rng = np.random.default_rng(rng_seed)
        mask = (rng.random(FEATURE_COUNT) < keep).astype(np.float64) / keep
        feats = feats * mask
    p = expit(_logits(m.weights, feats))
    return p.reshape(v.dims, order="F")


def _loss_and_grad(weights, feats, y):
    """Mean BCE and its exact gradient for the logistic model."""
    z = _logits(weights, feats)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    r = (expit(z) - y) / y.size
    grad = np.empty_like(weights)
    grad[:-1] = feats.T @ r
    grad[-1] = r.sum()
    return loss, grad


def _adam_apply(weights, grad, st: AdamState, cfg: TrainConfig):
    st.t += 1
    st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad
    st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = st.m / (1.0 - cfg.beta1**st.t)
    v_hat = st.v / (1.0 - cfg.beta2**st.t)
    return weights - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def train_step(
    m: ReferenceModel,
    mi: ModelInput,
    gt: LabelMask,
    opt_state: AdamState | None = None,
    cfg: TrainConfig | None = None,
):
    """One BCE gradient step on a single input; returns (loss, model, state)."""
    cfg = cfg or TrainConfig()
    if mi.dims != gt.dims:
        raise ValueError(f"input dims {mi.dims} vs label dims {gt.dims}")
    st = opt_state or AdamState.fresh(m.weights.size)
    feats = featurize(mi)
    y = gt.data.ravel(order="F").astype(np.float64)
    loss, grad = _loss_and_grad(m.weights, feats, y)
    new_w = _adam_apply(m.weights, grad, st, cfg)
    return loss, ReferenceModel(new_w, m.dropout_rate), st


def gradient_check(m: ReferenceModel, mi: ModelInput, gt: LabelMask, h: float = 1e-4) -> float:
    """Max relative disagreement between analytic and central-difference grads."""
    feats = featurize(mi)
    y = gt.data.ravel(order="F").astype(np.float64)
    _, ga = _loss_and_grad(m.weights, feats, y)
    gn = np.empty_like(ga)
    for i in range(m.weights.size):
        wp = m.weights.copy()
        wm = m.weights.copy()
        wp[i] += h
        wm[i] -= h
        lp, _ = _loss_and_grad(wp, feats, y)
        lm, _ = _loss_and_grad(wm, feats, y)
        gn[i] = (lp - lm) / (2.0 * h)
    denom = np.maximum(1e-12, np.abs(ga) + np.abs(gn))
    return float(np.max(np.abs(ga - gn) / denom))


def threshold_prediction(prob: np.ndarray) -> LabelMask:
    """p > 0.5 is foreground; the exact tie goes to background."""
    return LabelMask((prob > 0.5).astype(np.uint8))


def _iteration_guidance(model, v, gt, zero_guidance, cfg):
    """Guidance channels for one training iteration."""
    if zero_guidance:
        return None
    prob = predict(model, v, None)
    pred = threshold_prediction(prob)
    clicks = simulate_clicks(pred, gt, cfg.click_budget, rng_seed=cfg.rng_seed)
    if clicks.is_empty():
        return None
    return encode_clicks(clicks, v.dims)


def train(
    m: ReferenceModel,
    dataset: list,
    cfg: TrainConfig | None = None,
    val: list | None = None,
    on_epoch=None,
):
    """Run a full training schedule; returns (trained model, TrainReport).

    Modes: automatic always trains with zero guidance; deepgrow simulates
    clicks against the current zero-guidance prediction every iteration;
    deepedit alternates the two deterministically starting with zero
    guidance (even global iteration indices), so ceil(N/2) of N iterations
    are guidance-free. Validation Dice per epoch uses the zero-guidance
    prediction thresholded at 0.5.

    on_epoch, if given, is called as on_epoch(epoch_index, report) after
    each epoch; returning False stops training at that boundary (the
    partially trained model is still returned).
    """
    cfg = cfg or TrainConfig()
    if not dataset:
        raise EmptyDataset("training requires at least one (volume, label) pair")
    val = val or []
    model = m.copy()
    st = AdamState.fresh(model.weights.size)
    report = TrainReport()
    alt_rng = np.random.default_rng(cfg.rng_seed)
    it = 0  # global iteration counter across epochs
    for _ in range(cfg.epochs):
        losses = []
        trace = []
        batch_grads = []
        for v, gt in dataset:
            if cfg.mode == "automatic":
                zero_guidance = True
            elif cfg.mode == "deepgrow":
                zero_guidance = False
            elif cfg.stochastic_alternation:
                zero_guidance = bool(alt_rng.random() < 0.5)
            else:
                zero_guidance = it % 2 == 0
            g = _iteration_guidance(model, v, gt, zero_guidance, cfg)
            feats = featurize(compose_input(v, g))
            y = gt.data.ravel(order="F").astype(np.float64)
            loss, grad = _loss_and_grad(model.weights, feats, y)
            batch_grads.append(grad)
            if len(batch_grads) == cfg.batch_size:
                mean_grad = np.mean(batch_grads, axis=0)
                model = ReferenceModel(
                    _adam_apply(model.weights, mean_grad, st, cfg), model.dropout_rate
                )
                batch_grads = []
            losses.append(loss)
            trace.append(zero_guidance)
            it += 1
        if batch_grads:  # trailing partial batch
            mean_grad = np.mean(batch_grads, axis=0)
            model = ReferenceModel(
                _adam_apply(model.weights, mean_grad, st, cfg), model.dropout_rate
            )
        report.epoch_loss.append(float(np.mean(losses)))
        if val:
            dices = [
                dice(threshold_prediction(predict(model, v, None)), gt)
                for v, gt in val
            ]
            report.epoch_val_dice.append(float(np.mean(dices)))
        else:
            report.epoch_val_dice.append(float("nan"))
        report.zero_guidance_trace.append(trace)
        if on_epoch is not None and on_epoch(len(report.epoch_loss) - 1, report) is False:
            break
    return model, report


def save_checkpoint(m: ReferenceModel, path, cfg: TrainConfig | None = None) -> None:
    """Write the flat binary checkpoint plus a TrainConfig sidecar JSON."""
    blob = CHECKPOINT_MAGIC + struct.pack(
        "<Id", m.weights.size - 1, float(m.dropout_rate)
    )
    blob += m.weights.astype("<f8").tobytes()
    path = str(path)
    with open(path, "wb") as f:
        f.write(blob)
    sidecar = {"train_config": (cfg or TrainConfig()).to_json_dict()}
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)


def load_checkpoint(path) -> ReferenceModel:
    path = str(path)
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise BadMagic(f"checkpoint magic {blob[:8]!r}")
    if len(blob) < 8 + 12:
        raise TruncatedFile("checkpoint header incomplete")
    n_feat, rate = struct.unpack_from("<Id", blob, 8)
    need = 8 + 12 + (n_feat + 1) * 8
    if len(blob) < need:
        raise TruncatedFile(f"checkpoint needs {need} bytes, has {len(blob)}")
    w = np.frombuffer(blob, dtype="<f8", count=n_feat + 1, offset=20)
    return ReferenceModel(w.copy(), rate)
