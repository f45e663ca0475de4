"""The annotation engine behind the HTTP server and the CLI.

Holds the manifest (which models and strategies an instance exposes), the
datastore, per-model weight snapshots, upload sessions, and the single
background training job. Everything here is transport-agnostic; the server
module only translates HTTP to these calls and maps exceptions to status
codes, which is what keeps CLI and server outputs byte-identical.

Snapshot rule: inference reads whatever model snapshot is current at call
time. A training job works on its own copy and publishes (with the
checkpoint file committed via rename) only when it finishes, so inference
during training keeps seeing the pre-training weights.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .active_learning import ScoredImage, rank, strategy_from_name
from .datastore import Datastore
from .errors import (
    BadParams,
    EmptyPool,
    JobAlreadyRunning,
    MissingClicks,
    MissingScribbles,
    ModelUntrained,
    NoActiveJob,
    NoLabeledData,
    UnknownModel,
    UnknownSession,
    UnknownStrategy,
)
from .graphcut import EnergyParams, refine_prediction, segment_scribbles
from .model import (
    ReferenceModel,
    TrainConfig,
    load_checkpoint,
    predict,
    save_checkpoint,
    threshold_prediction,
    train,
)
from .volume import ClickSet, LabelMask, ScribbleMask, Volume

VERSION = "0.1.0"
NEURAL_TYPES = ("deepedit", "deepgrow", "segmentation")
MODEL_TYPES = NEURAL_TYPES + ("scribbles",)
SESSION_TTL = 3600.0
DEFAULT_BUDGET_BYTES = 256 * 1024 * 1024

# training mode implied by each model type, unless the request overrides it
_TYPE_MODE = {"deepedit": "deepedit", "deepgrow": "deepgrow", "segmentation": "automatic"}


@dataclass
class ModelSpec:
    type: str
    checkpoint: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.type not in MODEL_TYPES:
            raise ValueError(f"model type must be one of {MODEL_TYPES}, got {self.type!r}")

    def energy_params(self, overrides: dict | None = None) -> EnergyParams:
        p = dict(self.params)
        p.update(overrides or {})
        return EnergyParams(
            lambda_pair=float(p.get("lambda_pair", 5.0)),
            sigma_int=p.get("sigma_int"),
        )


@dataclass
class AppManifest:
    name: str = "labelforge"
    models: dict = field(default_factory=dict)  # name -> ModelSpec
    strategies: list = field(default_factory=list)
    planner: dict = field(default_factory=dict)
    datastore_root: str | None = None

    def __post_init__(self):
        self.models = {
            k: (v if isinstance(v, ModelSpec) else ModelSpec(**v))
            for k, v in self.models.items()
        }
        for s in self.strategies:
            strategy_from_name(s)  # raises UnknownStrategy

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "models": {
                k: {"type": m.type, "checkpoint": m.checkpoint, "params": m.params}
                for k, m in self.models.items()
            },
            "strategies": list(self.strategies),
            "planner": dict(self.planner),
            "datastore_root": self.datastore_root,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AppManifest":
        return cls(
            name=d.get("name", "labelforge"),
            models=d.get("models", {}),
            strategies=d.get("strategies", []),
            planner=d.get("planner", {}),
            datastore_root=d.get("datastore_root"),
        )


def default_manifest() -> AppManifest:
    return AppManifest(
        name="labelforge",
        models={
            "deepedit": ModelSpec(type="deepedit"),
            "deepgrow": ModelSpec(type="deepgrow"),
            "segmentation": ModelSpec(type="segmentation"),
            "scribbles": ModelSpec(type="scribbles"),
        },
        strategies=["first", "random", "epistemic", "tta"],
        planner={"budget_bytes": DEFAULT_BUDGET_BYTES},
    )


def load_manifest(path) -> AppManifest:
    with open(str(path)) as f:
        return AppManifest.from_json_dict(json.load(f))


def save_manifest(m: AppManifest, path) -> None:
    with open(str(path), "w") as f:
        json.dump(m.to_json_dict(), f, indent=2)


JOB_STATES = ("pending", "running", "done", "failed", "cancelled")
_ACTIVE = ("pending", "running")


@dataclass
class TrainJob:
    job_id: str
    model_name: str
    config: TrainConfig
    state: str = "pending"
    epochs_done: int = 0
    train_loss: float | None = None
    val_dice: float | None = None
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "model_name": self.model_name,
            "state": self.state,
            "epochs_done": self.epochs_done,
            "epochs_total": self.config.epochs,
            "train_loss": self.train_loss,
            "val_dice": self.val_dice,
            "error": self.error,
            "config": self.config.to_json_dict(),
        }


@dataclass
class Session:
    session_id: str
    volume: Volume
    expires_at: float


class LabelApp:
    """One annotation service instance: datastore + models + trainer."""

    def __init__(self, root, manifest: AppManifest | None = None):
        self.root = Path(root)
        self.manifest = manifest or default_manifest()
        ds_root = self.manifest.datastore_root or self.root
        self.datastore = Datastore.open_or_init(ds_root)
        self._lock = threading.RLock()
        self._models: dict[str, ReferenceModel] = {}
        self._trained: dict[str, bool] = {}
        self._job: TrainJob | None = None
        self._job_thread: threading.Thread | None = None
        self._cancel = threading.Event()
        self._sessions: dict[str, Session] = {}
        self._plan = None
        for name, spec in self.manifest.models.items():
            if spec.type == "scribbles":
                continue
            ckpt = self._checkpoint_path(name)
            if spec.checkpoint and not ckpt.exists():
                raise ValueError(
                    f"model {name!r} references missing checkpoint {ckpt}"
                )
            if ckpt.exists():
                # trained weights survive process restarts: a checkpoint a
                # previous job published is picked up even when the manifest
                # does not name one explicitly
                self._models[name] = load_checkpoint(ckpt)
                self._trained[name] = True
            else:
                self._models[name] = ReferenceModel()
                self._trained[name] = False
        self._try_compute_plan()

    # -- models ---------------------------------------------------------------

    def _spec(self, model_name: str) -> ModelSpec:
        spec = self.manifest.models.get(model_name)
        if spec is None:
            raise UnknownModel(f"no model named {model_name!r}")
        return spec

    def _checkpoint_path(self, model_name: str) -> Path:
        spec = self._spec(model_name)
        if spec.checkpoint:
            p = Path(spec.checkpoint)
            return p if p.is_absolute() else self.root / p
        return self.root / "models" / f"{model_name}.ckpt"

    def model_snapshot(self, model_name: str) -> tuple[ReferenceModel, bool]:
        """Current weights and trained flag; the returned model is immutable."""
        spec = self._spec(model_name)
        if spec.type == "scribbles":
            raise BadParams(f"model {model_name!r} has no weights")
        with self._lock:
            return self._models[model_name], self._trained[model_name]

    def is_trained(self, model_name: str) -> bool:
        spec = self._spec(model_name)
        if spec.type == "scribbles":
            return True
        with self._lock:
            return self._trained[model_name]

    def _publish_model(self, model_name: str, model: ReferenceModel, cfg: TrainConfig):
        ckpt = self._checkpoint_path(model_name)
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        tmp = ckpt.with_suffix(".ckpt.tmp")
        save_checkpoint(model, tmp, cfg)
        os.replace(str(tmp) + ".json", str(ckpt) + ".json")
        os.replace(tmp, ckpt)
        with self._lock:
            self._models[model_name] = model
            self._trained[model_name] = True

    # -- info / plan ------------------------------------------------------------

    def info(self) -> dict:
        with self._lock:
            plan = self._plan
        return {
            "name": self.manifest.name,
            "version": VERSION,
            "models": {
                name: {"type": spec.type, "trained": self.is_trained(name)}
                for name, spec in self.manifest.models.items()
            },
            "strategies": list(self.manifest.strategies),
            "plan": plan.to_json_dict() if plan is not None else None,
        }

    def _try_compute_plan(self):
        from .errors import EmptyDatastore, InsufficientBudget
        from .planner import dataset_stats, plan as make_plan

        budget = int(self.manifest.planner.get("budget_bytes", DEFAULT_BUDGET_BYTES))
        try:
            p = make_plan(dataset_stats(self.datastore), budget)
        except (EmptyDatastore, InsufficientBudget):
            p = None
        with self._lock:
            self._plan = p
        return p

    # -- volumes and sessions ----------------------------------------------------

    def resolve_volume(self, image_id: str | None, session_id: str | None) -> Volume:
        if (image_id is None) == (session_id is None):
            raise BadParams("provide exactly one of image or session")
        if image_id is not None:
            return self.datastore.load_image(image_id)  # raises UnknownImage
        return self.session_volume(session_id)

    def create_session(self, v: Volume, ttl: float = SESSION_TTL) -> Session:
        s = Session(secrets.token_hex(16), v, time.time() + ttl)
        with self._lock:
            self._purge_sessions()
            self._sessions[s.session_id] = s
        return s

    def session_volume(self, session_id: str) -> Volume:
        with self._lock:
            self._purge_sessions()
            s = self._sessions.get(session_id)
            if s is None:
                raise UnknownSession(f"no session {session_id!r}")
            return s.volume

    def _purge_sessions(self):
        now = time.time()
        dead = [k for k, s in self._sessions.items() if s.expires_at <= now]
        for k in dead:
            del self._sessions[k]

    # -- inference ----------------------------------------------------------------

    def infer(
        self,
        model_name: str,
        v: Volume,
        clicks: ClickSet | None = None,
        scribbles: ScribbleMask | None = None,
        params: dict | None = None,
    ) -> tuple[LabelMask, float]:
        """Run one model on one volume; returns (mask, latency in ms)."""
        spec = self._spec(model_name)
        params = params or {}
        t0 = time.perf_counter()
        if clicks is not None and clicks.is_empty():
            clicks = None
        if spec.type == "scribbles":
            if scribbles is None or not (
                scribbles.foreground.any() or scribbles.background.any()
            ):
                raise MissingScribbles("the scribbles model requires scribble strokes")
            ep = spec.energy_params(
                {k: params[k] for k in ("lambda_pair", "sigma_int") if k in params}
            )
            if params.get("method") == "refine":
                base = params.get("base_model")
                if not base:
                    raise BadParams("refine requires a base_model name")
                m, trained = self.model_snapshot(base)
                if not trained:
                    raise ModelUntrained(f"model {base!r} has no trained weights")
                prob = predict(m, v, clicks)
                mask = refine_prediction(prob, v, scribbles, ep)
            else:
                mask = segment_scribbles(v, scribbles, ep)
        else:
            m, trained = self.model_snapshot(model_name)
            if not trained:
                raise ModelUntrained(f"model {model_name!r} has no trained weights")
            if spec.type == "deepgrow" and (clicks is None or not clicks.positive):
                raise MissingClicks("deepgrow requires at least one positive click")
            if spec.type == "segmentation":
                clicks = None
            mask = threshold_prediction(predict(m, v, clicks))
        latency_ms = (time.perf_counter() - t0) * 1000.0
        return mask, latency_ms

    # -- training ------------------------------------------------------------------

    def start_training(self, model_name: str, overrides: dict | None = None) -> TrainJob:
        spec = self._spec(model_name)
        if spec.type not in NEURAL_TYPES:
            raise BadParams(f"model {model_name!r} is not trainable")
        cfg_dict = dict(overrides or {})
        cfg_dict.setdefault("mode", _TYPE_MODE[spec.type])
        try:
            cfg = TrainConfig.from_json_dict(cfg_dict)
        except (ValueError, TypeError) as e:
            raise BadParams(f"bad training config: {e}") from e
        labeled = self.datastore.labeled_ids()
        if not labeled:
            raise NoLabeledData("training requires at least one final label")
        with self._lock:
            if self._job is not None and self._job.state in _ACTIVE:
                raise JobAlreadyRunning(f"job {self._job.job_id} is {self._job.state}")
            job = TrainJob(secrets.token_hex(8), model_name, cfg)
            self._job = job
            self._cancel.clear()
            self._job_thread = threading.Thread(
                target=self._run_job, args=(job, labeled), daemon=True
            )
            self._job_thread.start()
        return job

    def _run_job(self, job: TrainJob, labeled: list):
        try:
            pairs = [
                (self.datastore.load_image(i), self.datastore.load_label(i, "final"))
                for i in labeled
            ]
            n_train = max(1, int(round(len(pairs) * 0.8)))
            train_set, val_set = pairs[:n_train], pairs[n_train:]
            with self._lock:
                if self._cancel.is_set():
                    job.state = "cancelled"
                    return
                job.state = "running"
                start_model = self._models[job.model_name]

            def on_epoch(epoch, report):
                with self._lock:
                    job.epochs_done = epoch + 1
                    job.train_loss = report.epoch_loss[-1]
                    d = report.epoch_val_dice[-1]
                    job.val_dice = None if d != d else d
                return not self._cancel.is_set()

            model, _ = train(start_model, train_set, job.config, val_set, on_epoch)
            if self._cancel.is_set():
                with self._lock:
                    job.state = "cancelled"
                return
            self._publish_model(job.model_name, model, job.config)
            self._try_compute_plan()
            with self._lock:
                job.state = "done"
        except Exception as e:  # surfaced through GET /train
            with self._lock:
                job.state = "failed"
                job.error = f"{type(e).__name__}: {e}"

    def train_status(self) -> TrainJob | None:
        with self._lock:
            return self._job

    def cancel_training(self) -> TrainJob:
        with self._lock:
            if self._job is None or self._job.state not in _ACTIVE:
                raise NoActiveJob("no pending or running training job")
            self._cancel.set()
            return self._job

    def wait_for_training(self, timeout: float | None = None) -> None:
        t = self._job_thread
        if t is not None:
            t.join(timeout)

    # -- active learning --------------------------------------------------------------

    def _scoring_model(self) -> ReferenceModel | None:
        for name, spec in self.manifest.models.items():
            if spec.type in NEURAL_TYPES:
                return self.model_snapshot(name)[0]
        return None

    def next_sample(self, strategy_name: str, seed: int = 0) -> ScoredImage:
        if strategy_name not in self.manifest.strategies:
            raise UnknownStrategy(f"strategy {strategy_name!r} is not enabled")
        strategy = strategy_from_name(strategy_name, seed=seed)
        pool = self.datastore.unlabeled_ids()
        if not pool:
            raise EmptyPool("every image already has a final label")
        return rank(pool, strategy, self._scoring_model(), self.datastore)[0]

    def rank_pool(self, strategy_name: str, seed: int = 0) -> list:
        if strategy_name not in self.manifest.strategies:
            raise UnknownStrategy(f"strategy {strategy_name!r} is not enabled")
        strategy = strategy_from_name(strategy_name, seed=seed)
        return rank(
            self.datastore.unlabeled_ids(), strategy, self._scoring_model(), self.datastore
        )
